"""Node-level FedAvg baselines: one client per bus, no graph information.

Each client owns a single bus and trains a per-bus detector on that bus's
(p, q) window. All clients are simulated at once by stacking their weights
along a leading client axis; the layer code broadcasts over it, so every
slice follows exactly the computation a lone client would run.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .evaluation import build_report
from .federated.aggregation import fedavg_aggregate
from .nn.init import init_dense, init_lstm
from .nn.layers import dense_backward, dense_forward, lstm_backward, lstm_forward, relu
from .nn.losses import bce_with_logits
from .nn.optim import sgd_step

KINDS = ("fed_lstm", "fed_mlp")


@dataclass(frozen=True)
class BaselineConfig:
    """``hidden`` defaults to (32, 32) LSTM units or (64, 64) ReLU units.

    ``server_lr`` is the step applied to the FedAvg-averaged update; the
    default (equal to ``lr_local``) makes the server step plain model
    averaging.
    """

    kind: str = "fed_mlp"
    hidden: tuple[int, ...] | None = None
    rounds: int = 50
    lr_local: float = 0.05
    server_lr: float | None = None
    batch_size: int = 64
    local_epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        hidden = self.hidden or ((32, 32) if self.kind == "fed_lstm" else (64, 64))
        object.__setattr__(self, "hidden", tuple(int(h) for h in hidden))
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden sizes must be positive")
        if self.rounds < 0 or self.lr_local <= 0 or self.batch_size < 1 or self.local_epochs < 1:
            raise ValueError("invalid training hyperparameters")

    @property
    def step(self):
        return self.lr_local if self.server_lr is None else self.server_lr

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def init_baseline(cfg: BaselineConfig, n_features, window, seed=0):
    rng = np.random.default_rng(seed)
    params = {}
    if cfg.kind == "fed_lstm":
        n_in = n_features
        for l, h in enumerate(cfg.hidden):
            for k, v in init_lstm(rng, n_in, h).items():
                params[f"lstm{l}.{k}"] = v
            n_in = h
    else:
        n_in = n_features * window
        for l, h in enumerate(cfg.hidden):
            params[f"W{l}"], params[f"b{l}"] = init_dense(rng, n_in, h)
            n_in = h
    params["Wout"], params["bout"] = init_dense(rng, n_in, 1)
    return params


def _prefixed(params, prefix):
    p = prefix + "."
    return {k[len(p):]: v for k, v in params.items() if k.startswith(p)}


def baseline_forward(params, kind, X):
    """Logits for per-bus windows ``X`` of shape (..., B, W, F)."""
    caches = []
    if kind == "fed_lstm":
        seq = X
        n = len({k.split(".")[0] for k in params if k.startswith("lstm")})
        for l in range(n):
            seq, _, c = lstm_forward(seq, _prefixed(params, f"lstm{l}"))
            caches.append(c)
        H = seq[..., -1, :]
    else:
        H = X.reshape(X.shape[:-2] + (-1,))
        n = sum(1 for k in params if k.startswith("W") and k != "Wout")
        for l in range(n):
            Z, inp = dense_forward(H, params[f"W{l}"], params[f"b{l}"])
            caches.append((inp, Z))
            H = relu(Z)
    z, inp = dense_forward(H, params["Wout"], params["bout"])
    return z[..., 0], (caches, inp, X.shape)


def baseline_backward(params, kind, cache, dz):
    caches, inp, x_shape = cache
    grads = {}
    grads["Wout"], grads["bout"], dH = dense_backward(inp, params["Wout"], dz[..., None])
    if kind == "fed_lstm":
        dseq = np.zeros(dH.shape[:-1] + (x_shape[-2], dH.shape[-1]))
        dseq[..., -1, :] = dH
        for l in reversed(range(len(caches))):
            g, dseq = lstm_backward(caches[l], dseq)
            grads.update({f"lstm{l}.{k}": v for k, v in g.items()})
    else:
        for l in reversed(range(len(caches))):
            x, Z = caches[l]
            dZ = dH * (Z > 0)
            grads[f"W{l}"], grads[f"b{l}"], dH = dense_backward(x, params[f"W{l}"], dZ)
    return grads


@dataclass
class BaselineResult:
    params: dict
    local_params: dict
    config: BaselineConfig
    history: list = field(default_factory=list)

    def predict_proba(self, X, batch_size=256):
        """Per-bus attack probabilities (N, n_buses) for model input ``X``."""
        N, n = X.shape[:2]
        flat = X.reshape((N * n,) + X.shape[2:])
        out = [baseline_forward(self.params, self.config.kind, flat[s:s + batch_size * n])[0]
               for s in range(0, N * n, batch_size * n)]
        return expit(np.concatenate(out)).reshape(N, n)


def fit_baseline(X, y, cfg: BaselineConfig, init=None, on_round=None) -> BaselineResult:
    """FedAvg over one client per bus.

    ``X`` is (N, n_buses, W, F) model input, ``y`` (N, n_buses). Client ``c``
    sees only column ``c``. Per round every client runs ``local_epochs`` of
    mini-batch SGD from the global weights in an order drawn from
    ``rng([seed, round, c])``; the server averages the scaled weight changes
    with weights ``n_m`` and takes one SGD step of size ``cfg.step``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    N, C = X.shape[:2]
    params = init if init is not None else init_baseline(cfg, X.shape[-1], X.shape[-2], cfg.seed)
    params = {k: np.array(v, dtype=float) for k, v in params.items()}
    Xc = np.ascontiguousarray(X.swapaxes(0, 1))  # (C, N, W, F)
    yc = np.ascontiguousarray(y.T)
    rows = np.arange(C)[:, None]
    local = {}
    history = []
    for r in range(1, cfg.rounds + 1):
        local = {k: np.broadcast_to(v, (C,) + v.shape).copy() for k, v in params.items()}
        rngs = [np.random.default_rng([cfg.seed, r, c]) for c in range(C)]
        totals = np.zeros(C)
        for _ in range(cfg.local_epochs):
            order = np.stack([g.permutation(N) for g in rngs])
            for s in range(0, N, cfg.batch_size):
                idx = order[:, s:s + cfg.batch_size]
                z, cache = baseline_forward(local, cfg.kind, Xc[rows, idx])
                yb = yc[rows, idx]
                loss = np.logaddexp(0.0, z) - yb * z
                _, dz = bce_with_logits(z, yb)
                # per-client mean loss: undo the global normalisation over C clients
                grads = baseline_backward(local, cfg.kind, cache, dz * C)
                local = sgd_step(local, grads, cfg.lr_local)
                totals += loss.sum(axis=1)
        losses = totals / (N * cfg.local_epochs)
        if not np.isfinite(losses).all():
            from .federated.trainer import TrainingDivergedError
            raise TrainingDivergedError(r, int(np.flatnonzero(~np.isfinite(losses))[0]))
        updates = [({k: (params[k] - local[k][c]) / cfg.lr_local for k in params}, N) for c in range(C)]
        params = sgd_step(params, fedavg_aggregate(updates), cfg.step)
        history.extend((r, c, float(losses[c])) for c in range(C))
        if on_round is not None:
            on_round(r, params)
    return BaselineResult(params, local, cfg, history)


def train_baseline(grid, train_X, train_y, test_X, test_y, cfg: BaselineConfig, seed=None,
                   threshold=0.5, dataset=""):
    """Fit a baseline and evaluate it on the test windows.

    Returns ``(BaselineResult, MetricReport)``.
    """
    if train_X.shape[1] != grid.n_buses or test_X.shape[1] != grid.n_buses:
        raise ValueError("dataset bus count does not match the grid")
    if seed is not None:
        cfg = BaselineConfig(**{**cfg.to_dict(), "seed": seed})
    result = fit_baseline(train_X, train_y, cfg)
    report = build_report(result.predict_proba(test_X), test_y, grid.labels, threshold,
                          method=cfg.kind, dataset=dataset)
    return result, report
