"""Federated training: messages, aggregation, clients and the round loop."""
from .aggregation import ServerState, fedadam_apply, fedavg_aggregate, gcn_apply
from .client import (
    ClientState,
    build_clients,
    client_local_step,
    federated_forward,
    fedgraph_route,
    share_buses,
)
from .messages import (
    EmbeddingShare,
    GradientUpload,
    ProtocolError,
    Transcript,
    WeightBroadcast,
    check_message_privacy,
    transcript_line,
)
from .trainer import (
    TrainConfig,
    TrainingDivergedError,
    TrainResult,
    centralized_train,
    load_server,
    load_weights,
    save_server,
    save_weights,
    train,
)

__all__ = [
    "ClientState", "EmbeddingShare", "GradientUpload", "ProtocolError", "ServerState",
    "TrainConfig", "TrainResult", "TrainingDivergedError", "Transcript", "WeightBroadcast",
    "build_clients", "centralized_train", "check_message_privacy", "client_local_step",
    "federated_forward", "fedadam_apply", "fedavg_aggregate", "fedgraph_route", "gcn_apply",
    "load_server", "load_weights", "save_server", "save_weights", "share_buses", "train",
    "transcript_line",
]
