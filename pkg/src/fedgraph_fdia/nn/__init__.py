from .layers import (
    NotForwardedError,
    dense_backward,
    dense_forward,
    gcn_forward,
    gcn_layer_backward,
    gcn_layer_forward,
    lstm_backward,
    lstm_forward,
    relu,
    sigmoid,
)
from .losses import EPS_CLIP, bce_with_logits, binary_cross_entropy
from .optim import AdamState, adam_step, sgd_step

__all__ = [
    "AdamState", "EPS_CLIP", "NotForwardedError", "adam_step", "bce_with_logits",
    "binary_cross_entropy", "dense_backward", "dense_forward", "gcn_forward",
    "gcn_layer_backward", "gcn_layer_forward", "lstm_backward", "lstm_forward",
    "relu", "sgd_step", "sigmoid",
]
