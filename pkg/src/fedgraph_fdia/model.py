"""The hybrid detector network: a per-node LSTM stack feeding a GCN stack.

Weights live in two flat dicts. ``fe`` (feature extractor) holds
``lstm{l}.W{f,i,s,o}`` / ``lstm{l}.B{f,i,s,o}``; ``gcn`` holds ``W{l}`` /
``b{l}``. The two groups are aggregated by different federated rules.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .nn.init import init_dense, init_lstm
from .nn.layers import (
    NotForwardedError,
    gcn_layer_backward,
    gcn_layer_forward,
    lstm_backward,
    lstm_forward,
    relu,
)
from .nn.losses import bce_with_logits


@dataclass(frozen=True)
class HybridConfig:
    n_features: int = 2
    lstm_units: tuple[int, ...] = (32, 32)
    gcn_units: tuple[int, ...] = (128, 128, 1)

    def __post_init__(self):
        object.__setattr__(self, "lstm_units", tuple(int(u) for u in self.lstm_units))
        object.__setattr__(self, "gcn_units", tuple(int(u) for u in self.gcn_units))
        if not self.lstm_units or not self.gcn_units:
            raise ValueError("need at least one LSTM and one GCN layer")
        if min(self.lstm_units + self.gcn_units) < 1 or self.n_features < 1:
            raise ValueError("layer widths and n_features must be >= 1")
        if self.gcn_units[-1] != 1:
            raise ValueError("the last GCN layer must have one output per node")

    def to_dict(self):
        d = asdict(self)
        d["lstm_units"] = list(self.lstm_units)
        d["gcn_units"] = list(self.gcn_units)
        return d


@dataclass
class ModelWeights:
    fe: dict[str, np.ndarray]
    gcn: dict[str, np.ndarray]
    config: HybridConfig = field(default_factory=HybridConfig)

    def copy(self):
        return ModelWeights({k: v.copy() for k, v in self.fe.items()},
                            {k: v.copy() for k, v in self.gcn.items()}, self.config)


def init_hybrid(config: HybridConfig, seed=0) -> ModelWeights:
    rng = np.random.default_rng(seed)
    fe = {}
    n_in = config.n_features
    for l, h in enumerate(config.lstm_units):
        for k, v in init_lstm(rng, n_in, h).items():
            fe[f"lstm{l}.{k}"] = v
        n_in = h
    gcn = {}
    for l, h in enumerate(config.gcn_units):
        gcn[f"W{l}"], gcn[f"b{l}"] = init_dense(rng, n_in, h)
        n_in = h
    return ModelWeights(fe, gcn, config)


def _layer(params, prefix):
    p = prefix + "."
    return {k[len(p):]: v for k, v in params.items() if k.startswith(p)}


def n_lstm_layers(fe):
    return len({k.split(".")[0] for k in fe})


def feature_forward(fe, X):
    """Final hidden state of the LSTM stack for sequences ``X`` (..., N, T, F)."""
    caches = []
    seq = X
    for l in range(n_lstm_layers(fe)):
        seq, _, cache = lstm_forward(seq, _layer(fe, f"lstm{l}"))
        caches.append(cache)
    return seq[..., -1, :], caches


def feature_backward(caches, dH_last):
    if not caches:
        raise NotForwardedError("feature_backward needs the forward caches")
    grads = {}
    T = caches[-1]["X_tm"].shape[0]
    dseq = np.zeros(dH_last.shape[:-1] + (T, dH_last.shape[-1]))
    dseq[..., -1, :] = dH_last
    for l in reversed(range(len(caches))):
        g, dseq = lstm_backward(caches[l], dseq)
        grads.update({f"lstm{l}.{k}": v for k, v in g.items()})
    return grads, dseq


def gcn_stack_forward(gcn, H0, L_local, remote=None, L_remote=None):
    """GCN stack over a client's nodes.

    ``remote`` (optional) lists, per layer, the embeddings of remote boundary
    nodes entering that layer, shape (B, n_remote, d_l). Returns
    ``(logits, layer_inputs, caches)`` where ``layer_inputs[l]`` are this
    client's embeddings entering layer ``l``.
    """
    n_layers = sum(1 for k in gcn if k.startswith("W"))
    H = H0
    inputs, caches = [], []
    Z = None
    for l in range(n_layers):
        inputs.append(H)
        H_rem = remote[l] if remote is not None else None
        Z, P = gcn_layer_forward(H, L_local, gcn[f"W{l}"], gcn[f"b{l}"], H_rem, L_remote)
        caches.append((P, H.shape, Z))
        if l < n_layers - 1:
            H = relu(Z)
    return Z[..., 0], inputs, caches


def gcn_stack_backward(gcn, caches, L_local, dlogits):
    if not caches:
        raise NotForwardedError("gcn_stack_backward needs the forward caches")
    grads = {}
    dZ = dlogits[..., None]
    for l in reversed(range(len(caches))):
        P, H_shape, _ = caches[l]
        dW, db, dH = gcn_layer_backward(P, H_shape, L_local, gcn[f"W{l}"], dZ)
        grads[f"W{l}"], grads[f"b{l}"] = dW, db
        if l > 0:
            dZ = dH * (caches[l - 1][2] > 0)
    return grads, dH


def hybrid_forward(weights: ModelWeights, X, L_local, remote=None, L_remote=None):
    """Logits (B, n) for normalized windows ``X`` of shape (B, n, T, F)."""
    B, n = X.shape[:2]
    H_last, fcache = feature_forward(weights.fe, X.reshape((B * n,) + X.shape[2:]))
    H0 = H_last.reshape(B, n, -1)
    logits, inputs, gcache = gcn_stack_forward(weights.gcn, H0, L_local, remote, L_remote)
    return logits, inputs, (fcache, gcache, (B, n))


def hybrid_backward(weights: ModelWeights, cache, L_local, dlogits):
    fcache, gcache, (B, n) = cache
    g_gcn, dH0 = gcn_stack_backward(weights.gcn, gcache, L_local, dlogits)
    g_fe, _ = feature_backward(fcache, dH0.reshape(B * n, -1))
    return g_fe, g_gcn


def hybrid_loss_and_grads(weights: ModelWeights, X, y, L_local, remote=None, L_remote=None):
    logits, inputs, cache = hybrid_forward(weights, X, L_local, remote, L_remote)
    loss, dlogits = bce_with_logits(logits, y)
    g_fe, g_gcn = hybrid_backward(weights, cache, L_local, dlogits)
    return loss, g_fe, g_gcn, inputs


def predict_proba(weights: ModelWeights, X, L, batch_size=128):
    out = []
    for start in range(0, X.shape[0], batch_size):
        logits, _, _ = hybrid_forward(weights, X[start:start + batch_size], L)
        out.append(logits)
    return expit(np.concatenate(out, axis=0))
