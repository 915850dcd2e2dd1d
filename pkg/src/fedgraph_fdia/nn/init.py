import numpy as np

from .layers import GATES, lstm_param_shapes


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def init_lstm(rng, n_in, hidden, forget_bias=1.0):
    params = {}
    for g in GATES:
        params[f"W{g}"] = glorot(rng, hidden + n_in, hidden, shape=(hidden, hidden + n_in))
    for k, shape in lstm_param_shapes(n_in, hidden).items():
        if k.startswith("B"):
            params[k] = np.zeros(shape)
    params["Bf"] += forget_bias
    return params


def init_dense(rng, n_in, n_out):
    return glorot(rng, n_in, n_out), np.zeros(n_out)
