"""The synchronous federated training loop and its single-process oracle."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..grid import ClientPartition, normalized_laplacian
from ..model import HybridConfig, ModelWeights, hybrid_loss_and_grads, init_hybrid
from ..nn.checkpoint import flatten, load_checkpoint, save_checkpoint, unflatten
from ..nn.optim import AdamState, adam_step, sgd_step
from .aggregation import ServerState, fedadam_apply, fedavg_aggregate, gcn_apply
from .client import build_clients, client_local_step, fedgraph_route, federated_forward
from .messages import WeightBroadcast


class TrainingDivergedError(FloatingPointError):
    def __init__(self, round, client=None):
        who = "" if client is None else f" on client {client}"
        super().__init__(f"non-finite training loss in round {round}{who}")
        self.round, self.client = round, client


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 50
    lr_local: float = 0.01
    lr_server: float = 0.001
    gcn_lr: float | None = None
    gcn_optimizer: str = "sgd"
    batch_size: int = 64
    local_epochs: int = 1
    participation: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.lr_local <= 0 or self.lr_server <= 0 or (self.gcn_lr is not None and self.gcn_lr <= 0):
            raise ValueError("learning rates must be positive")
        if self.gcn_optimizer not in ("sgd", "adam"):
            raise ValueError("gcn_optimizer must be 'sgd' or 'adam'")
        if self.batch_size < 1 or self.local_epochs < 1 or self.threads < 1:
            raise ValueError("batch_size, local_epochs and threads must be >= 1")
        if not 0 < self.participation <= 1:
            raise ValueError("participation must lie in (0, 1]")

    @property
    def server_gcn_lr(self):
        return self.lr_local if self.gcn_lr is None else self.gcn_lr

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    weights: ModelWeights
    server: ServerState
    client_weights: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)

    def round_losses(self):
        """Mean client loss per round, as ``{round: loss}``."""
        out = {}
        for r, _, loss in self.history:
            out.setdefault(r, []).append(loss)
        return {r: float(np.mean(v)) for r, v in out.items()}


def new_server(weights: ModelWeights, cfg: TrainConfig, n_clients=()) -> ServerState:
    hyper = dict(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    gcn_opt = (AdamState.zeros_like(weights.gcn, lr=cfg.lr_server, **hyper)
               if cfg.gcn_optimizer == "adam" else None)
    return ServerState({k: v.copy() for k, v in weights.fe.items()},
                       {k: v.copy() for k, v in weights.gcn.items()},
                       AdamState.zeros_like(weights.fe, lr=cfg.lr_server, **hyper),
                       gcn_opt, cfg.server_gcn_lr, 0, dict(n_clients))


def participants(cfg: TrainConfig, round, num_clients):
    if cfg.participation >= 1.0:
        return list(range(num_clients))
    k = max(1, math.ceil(cfg.participation * num_clients))
    # the third key never equals a client id, so this stream is disjoint from theirs
    rng = np.random.default_rng([cfg.seed, round, num_clients])
    return sorted(int(c) for c in rng.choice(num_clients, size=k, replace=False))


def _client_rng(cfg, round, client):
    return np.random.default_rng([cfg.seed, round, client])


def bootstrap_embeddings(clients, weights, part, *, round=0, chunk=128, transcript=None):
    """Fill every client's embedding cache with one layer-synchronous pass."""
    widths = [weights.gcn[f"W{l}"].shape[0] for l in range(sum(1 for k in weights.gcn if k.startswith("W")))]
    for st in clients:
        st.reset_cache(widths)
    n = clients[0].n_samples
    for s in range(0, n, chunk):
        idx = np.arange(s, min(n, s + chunk))
        shares = []
        federated_forward(clients, weights, [st.X[idx] for st in clients], part,
                          round=round, collect=shares, samples=idx)
        for c, inbox in fedgraph_route(shares, part).items():
            clients[c].receive(inbox)
            if transcript is not None and s == 0:
                for share in inbox:
                    transcript.record(share, f"client{c}")


# ------------------------------------------------------------ checkpoints


def _opt_tensors(opt, prefix):
    return {f"{prefix}.m": opt.m, f"{prefix}.v": opt.v} if opt is not None else {}


def save_server(path, server: ServerState, config: HybridConfig, extra=None):
    groups = {"fe": server.fe, "gcn": server.gcn, **_opt_tensors(server.fe_opt, "fe_opt"),
              **_opt_tensors(server.gcn_opt, "gcn_opt")}
    opt_meta = lambda o: None if o is None else {"t": o.t, "beta1": o.beta1, "beta2": o.beta2,
                                                  "eps": o.eps, "lr": o.lr}
    header = {"kind": "fedgraph-server", "round": server.round, "model": config.to_dict(),
              "gcn_lr": server.gcn_lr, "fe_opt": opt_meta(server.fe_opt),
              "gcn_opt": opt_meta(server.gcn_opt),
              "registry": {str(k): v for k, v in server.registry.items()}, **(extra or {})}
    save_checkpoint(path, flatten(groups), header)


def load_server(path):
    """Returns ``(ServerState, HybridConfig, header)``."""
    tensors, header = load_checkpoint(path)
    groups = unflatten(tensors)

    def opt(name):
        meta = header.get(name)
        if meta is None:
            return None
        return AdamState(groups[f"{name}.m"], groups[f"{name}.v"], **meta)

    server = ServerState(groups["fe"], groups["gcn"], opt("fe_opt"), opt("gcn_opt"), header["gcn_lr"],
                         header["round"], {int(k): v for k, v in header.get("registry", {}).items()})
    cfg = HybridConfig(**header["model"])
    return server, cfg, header


def save_weights(path, weights: ModelWeights, extra=None):
    save_checkpoint(path, flatten({"fe": weights.fe, "gcn": weights.gcn}),
                    {"kind": "fedgraph-model", "model": weights.config.to_dict(), **(extra or {})})


def load_weights(path) -> ModelWeights:
    tensors, header = load_checkpoint(path)
    groups = unflatten(tensors)
    return ModelWeights(groups["fe"], groups["gcn"], HybridConfig(**header["model"]))


# ------------------------------------------------------------ training


def train(grid, part: ClientPartition, X, y, cfg: TrainConfig, *, model_config=None, init=None,
          L=None, transcript=None, checkpoint_dir=None, resume=False, on_round=None) -> TrainResult:
    """Federated training over ``part``.

    ``X`` is (N, n_buses, W, F) model input and ``y`` (N, n_buses) labels; each
    client only ever touches its own bus columns. Every round broadcasts the
    global weights, runs one local epoch per participating client, routes the
    fresh boundary embeddings (consumed next round), FedAvg-aggregates the
    uploads and applies FedADAM to the LSTM weights and SGD (or ADAM) to the
    GCN weights. Checkpoints go to ``checkpoint_dir``; with ``resume`` the
    stored server state is reloaded and the loop continues after its round.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 4 or y.shape != X.shape[:2] or X.shape[1] != grid.n_buses:
        raise ValueError(f"expected X (N, {grid.n_buses}, W, F) and matching y, got {X.shape} and {y.shape}")
    L = normalized_laplacian(grid) if L is None else L
    model_config = model_config or HybridConfig(n_features=X.shape[-1])
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if resume and ckpt is not None and (ckpt / "global.ckpt").exists():
        server, model_config, _ = load_server(ckpt / "global.ckpt")
    else:
        init = init if init is not None else init_hybrid(model_config, cfg.seed)
        model_config = init.config
        server = new_server(init, cfg)
    clients = build_clients(grid, part, X, y, L)
    server.registry = {st.client: st.n_m for st in clients}
    result = TrainResult(ModelWeights(server.fe, server.gcn, model_config), server)
    if server.round >= cfg.rounds:
        return result
    current = ModelWeights(server.fe, server.gcn, model_config)
    bootstrap_embeddings(clients, current, part, round=server.round, transcript=transcript)

    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        for r in range(server.round + 1, cfg.rounds + 1):
            active = participants(cfg, r, part.num_clients)
            bc = WeightBroadcast.create(r, server.fe, server.gcn)

            def step(c, bc=bc, r=r):
                return client_local_step(clients[c], bc, [], lr=cfg.lr_local, batch_size=cfg.batch_size,
                                         rng=_client_rng(cfg, r, c), epochs=cfg.local_epochs)

            outs = list(pool.map(step, active)) if pool else [step(c) for c in active]
            uploads, shares = [], []
            for c, (upload, out_shares, loss, local_w) in zip(active, outs):
                if transcript is not None:
                    transcript.record(bc, f"client{c}")
                    transcript.record(upload, "server")
                if not np.isfinite(loss):
                    raise TrainingDivergedError(r, c)
                uploads.append(upload)
                shares.extend(out_shares)
                result.history.append((r, c, float(loss)))
                result.client_weights[c] = local_w
            for c, inbox in fedgraph_route(shares, part, senders=active).items():
                clients[c].receive(inbox)
                if transcript is not None:
                    for share in inbox:
                        transcript.record(share, f"client{c}")
            avg_fe = fedavg_aggregate([(dict(u.fe_grads), u.n_m) for u in uploads])
            avg_gcn = fedavg_aggregate([(dict(u.gcn_grads), u.n_m) for u in uploads])
            server = gcn_apply(fedadam_apply(server, avg_fe), avg_gcn)
            server.round = r
            if not all(np.isfinite(v).all() for v in (*server.fe.values(), *server.gcn.values())):
                raise TrainingDivergedError(r)
            result.server = server
            result.weights = ModelWeights(server.fe, server.gcn, model_config)
            if ckpt is not None:
                save_training_state(ckpt, result)
            if on_round is not None:
                on_round(r, result)
    finally:
        if pool is not None:
            pool.shutdown()
    return result


def save_training_state(directory, result: TrainResult):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_server(directory / "global.ckpt", result.server, result.weights.config)
    for c, w in sorted(result.client_weights.items()):
        save_weights(directory / f"client{c}.ckpt", w, {"client": c, "round": result.server.round})


def centralized_train(X, y, L, cfg: TrainConfig, *, model_config=None, init=None) -> TrainResult:
    """The same optimisation run on the whole graph in one process.

    With a single client the federated loop must reproduce this trajectory;
    it shares no code with the client/server path beyond the model and the
    optimizer primitives.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    model_config = model_config or HybridConfig(n_features=X.shape[-1])
    w = (init if init is not None else init_hybrid(model_config, cfg.seed)).copy()
    hyper = dict(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, lr=cfg.lr_server)
    fe_opt = AdamState.zeros_like(w.fe, **hyper)
    gcn_opt = AdamState.zeros_like(w.gcn, **hyper) if cfg.gcn_optimizer == "adam" else None
    history = []
    trajectory = []
    for r in range(1, cfg.rounds + 1):
        local = w.copy()
        total = 0.0
        rng = _client_rng(cfg, r, 0)
        for _ in range(cfg.local_epochs):
            order = rng.permutation(len(X))
            for s in range(0, len(X), cfg.batch_size):
                b = order[s:s + cfg.batch_size]
                loss, g_fe, g_gcn, _ = hybrid_loss_and_grads(local, X[b], y[b], L)
                local.fe = sgd_step(local.fe, g_fe, cfg.lr_local)
                local.gcn = sgd_step(local.gcn, g_gcn, cfg.lr_local)
                total += loss * b.size
        history.append((r, 0, total / (len(X) * cfg.local_epochs)))
        d_fe = {k: (w.fe[k] - local.fe[k]) / cfg.lr_local for k in w.fe}
        d_gcn = {k: (w.gcn[k] - local.gcn[k]) / cfg.lr_local for k in w.gcn}
        w.fe, fe_opt = adam_step(fe_opt, w.fe, d_fe)
        if gcn_opt is None:
            w.gcn = sgd_step(w.gcn, d_gcn, cfg.server_gcn_lr)
        else:
            w.gcn, gcn_opt = adam_step(gcn_opt, w.gcn, d_gcn)
        trajectory.append(w.copy())
    server = ServerState(w.fe, w.gcn, fe_opt, gcn_opt, cfg.server_gcn_lr, cfg.rounds, {0: int(y.size)})
    return TrainResult(w, server, {}, history, trajectory)
