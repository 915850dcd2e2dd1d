"""SGD and ADAM updates over dicts of named arrays."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check_shapes(params, grads):
    if params.keys() != grads.keys():
        raise ValueError(f"parameter/gradient names differ: {sorted(params)} vs {sorted(grads)}")
    for k in params:
        if np.shape(params[k]) != np.shape(grads[k]):
            raise ValueError(f"shape mismatch for {k}: {np.shape(params[k])} vs {np.shape(grads[k])}")


def sgd_step(params, grads, lr):
    _check_shapes(params, grads)
    return {k: params[k] - lr * grads[k] for k in params}


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-3

    @classmethod
    def zeros_like(cls, params, **hyper):
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, **hyper)

    def copy(self):
        return AdamState({k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()},
                         self.t, self.beta1, self.beta2, self.eps, self.lr)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected ADAM update. Returns ``(new_params, new_state)``."""
    _check_shapes(params, grads)
    _check_shapes(state.m, grads)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    m, v, out = {}, {}, {}
    for k, g in grads.items():
        m[k] = b1 * state.m[k] + (1.0 - b1) * g
        v[k] = b2 * state.v[k] + (1.0 - b2) * (g * g)
        out[k] = params[k] - state.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + state.eps)
    new_state = AdamState(m, v, t, b1, b2, state.eps, state.lr)
    return out, new_state
