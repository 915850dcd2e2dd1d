"""Server-side aggregation: sample-weighted FedAvg and the FedADAM update."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..nn.optim import AdamState, adam_step, sgd_step


def fedavg_aggregate(updates):
    """Weighted mean of client updates, weights ``n_m / sum(n_m)``.

    ``updates`` is a sequence of ``(grads, n_m)``; ``grads`` is a dict of
    arrays or a single array. Reduction runs in list order.
    """
    updates = list(updates)
    if not updates:
        raise ValueError("fedavg_aggregate needs at least one update")
    counts = np.array([n for _, n in updates], dtype=float)
    if np.any(counts < 0) or counts.sum() <= 0:
        raise ValueError("sample counts must be non-negative with a positive total")
    single = not isinstance(updates[0][0], dict)
    grads = [{"": g} if single else g for g, _ in updates]
    keys = grads[0].keys()
    for g in grads[1:]:
        if g.keys() != keys:
            raise ValueError("updates have different parameter names")
        for k in keys:
            if np.shape(g[k]) != np.shape(grads[0][k]):
                raise ValueError(f"shape mismatch for {k!r}: {np.shape(g[k])} vs {np.shape(grads[0][k])}")
    weights = counts / counts.sum()
    out = {}
    for k in keys:
        acc = np.zeros(np.shape(grads[0][k]))
        for w, g in zip(weights, grads):
            acc += w * np.asarray(g[k], dtype=float)
        out[k] = acc
    return out[""] if single else out


@dataclass
class ServerState:
    """Global weights plus the server optimizers.

    ``gcn_opt`` is None for the default plain-SGD update of the graph layers
    (step ``gcn_lr``); setting it switches those layers to FedADAM too.
    """

    fe: dict
    gcn: dict
    fe_opt: AdamState
    gcn_opt: AdamState | None = None
    gcn_lr: float = 0.01
    round: int = 0
    registry: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, params, opt in (("fe", self.fe, self.fe_opt), ("gcn", self.gcn, self.gcn_opt)):
            if opt is None:
                continue
            if opt.m.keys() != params.keys() or any(opt.m[k].shape != params[k].shape for k in params):
                raise ValueError(f"{name} optimizer state does not match the {name} weights")


def fedadam_apply(server: ServerState, avg_grad) -> ServerState:
    """One server ADAM step on the global feature-extractor weights."""
    fe, opt = adam_step(server.fe_opt, server.fe, avg_grad)
    return replace(server, fe=fe, fe_opt=opt)


def gcn_apply(server: ServerState, avg_grad) -> ServerState:
    if server.gcn_opt is None:
        return replace(server, gcn=sgd_step(server.gcn, avg_grad, server.gcn_lr))
    gcn, opt = adam_step(server.gcn_opt, server.gcn, avg_grad)
    return replace(server, gcn=gcn, gcn_opt=opt)
