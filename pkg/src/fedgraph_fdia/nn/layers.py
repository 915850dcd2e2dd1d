"""LSTM, dense and graph-convolution layers with hand-written backward passes.

Every weight array may carry extra leading axes (for example one slice per
federated client). Inputs then need the same leading axes; matmul broadcasting
keeps the per-slice computation identical to the unbatched case.
"""
from __future__ import annotations

import numpy as np

GATES = ("f", "i", "s", "o")


def sigmoid(x, out=None):
    """Logistic function via tanh (faster than exp-based forms, overflow-free).

    Pass ``out=x`` to evaluate in place.
    """
    out = np.multiply(x, 0.5, out=out)
    np.tanh(out, out=out)
    out *= 0.5
    out += 0.5
    return out


def relu(x):
    return np.maximum(x, 0.0)


def _T(a):
    return np.swapaxes(a, -1, -2)


def _sum_to(grad, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class NotForwardedError(RuntimeError):
    """backward() called without a cached forward pass."""


# ---------------------------------------------------------------- LSTM


def lstm_param_shapes(n_in, hidden):
    shapes = {f"W{g}": (hidden, hidden + n_in) for g in GATES}
    shapes.update({f"B{g}": (hidden,) for g in GATES})
    return shapes


def _stack_gates(params):
    W = np.concatenate([params[f"W{g}"] for g in GATES], axis=-2)
    B = np.concatenate([params[f"B{g}"] for g in GATES], axis=-1)
    return W, B


def _outer_sum(a, b, shape):
    """sum over time and rows of a_t^T b_t for time-major (T, ..., N, k) arrays."""
    a = np.moveaxis(a, 0, -3)
    b = np.moveaxis(b, 0, -3)
    a = a.reshape(a.shape[:-3] + (-1, a.shape[-1]))
    b = b.reshape(b.shape[:-3] + (-1, b.shape[-1]))
    return _sum_to(_T(a) @ b, shape)


def lstm_forward(X, params, H0=None, S0=None):
    """Run one LSTM layer over a sequence.

    ``X`` has shape (..., N, T, n_in). Returns ``(H_seq, S_T, cache)`` where
    ``H_seq`` is (..., N, T, hidden). The candidate state uses the logistic
    function, like the three gates.
    """
    X = np.asarray(X, dtype=float)
    W, B = _stack_gates(params)
    h = params["Wf"].shape[-2]
    n_in = W.shape[-1] - h
    if X.shape[-1] != n_in:
        raise ValueError(f"LSTM expects {n_in} input features, got {X.shape[-1]}")
    lead = X.shape[:-2]
    T = X.shape[-2]
    Wh, Wx = W[..., :h], W[..., h:]
    WhT = _T(Wh)
    # time-major layout (T, ..., N, .) so every step reads contiguous blocks;
    # the input projection for all timesteps is one matmul
    X_tm = np.ascontiguousarray(np.moveaxis(X, -2, 0))
    gates = X_tm @ _T(Wx)
    gates += np.expand_dims(B, -2)
    S_all = np.empty((T + 1,) + lead + (h,))
    H_all = np.empty((T + 1,) + lead + (h,))
    tanhS = np.empty((T,) + lead + (h,))
    S_all[0] = 0.0 if S0 is None else S0
    H_all[0] = 0.0 if H0 is None else H0
    for t in range(T):
        A = gates[t]
        A += H_all[t] @ WhT
        sigmoid(A, out=A)
        S = S_all[t + 1]
        np.multiply(A[..., :h], S_all[t], out=S)
        S += A[..., h:2 * h] * A[..., 2 * h:3 * h]
        np.tanh(S, out=tanhS[t])
        np.multiply(A[..., 3 * h:], tanhS[t], out=H_all[t + 1])
    cache = {"params": params, "X_tm": X_tm, "gates": gates, "S": S_all, "H": H_all, "tanhS": tanhS}
    return np.moveaxis(H_all[1:], 0, -2), S_all[T], cache


def lstm_backward(cache, dH_seq):
    """Gradients for :func:`lstm_forward` given dLoss/dH at every step.

    Returns ``(grads, dX)``; ``grads`` holds entries for every key in the
    layer's parameter dict.
    """
    if not cache:
        raise NotForwardedError("lstm_backward needs the forward cache")
    params = cache["params"]
    X_tm = cache["X_tm"]
    W, _ = _stack_gates(params)
    h = params["Wf"].shape[-2]
    T = X_tm.shape[0]
    Wh, Wx = W[..., :h], W[..., h:]
    gates, S_all, tanhS = cache["gates"], cache["S"], cache["tanhS"]
    dH_tm = np.moveaxis(dH_seq, -2, 0)
    dpre = np.empty_like(gates)
    dH_next = np.zeros(dH_tm.shape[1:])
    dS_next = np.zeros_like(dH_next)
    for t in reversed(range(T)):
        A = gates[t]
        tS = tanhS[t]
        dH = dH_tm[t] + dH_next
        dS = dS_next + dH * A[..., 3 * h:] * (1.0 - tS * tS)
        d = dpre[t]
        d[..., :h] = dS * S_all[t]
        d[..., h:2 * h] = dS * A[..., 2 * h:3 * h]
        d[..., 2 * h:3 * h] = dS * A[..., h:2 * h]
        d[..., 3 * h:] = dH * tS
        d *= A * (1.0 - A)
        dH_next = d @ Wh
        dS_next = dS * A[..., :h]
    dWh = _outer_sum(dpre, cache["H"][:-1], Wh.shape)
    dWx = _outer_sum(dpre, X_tm, Wx.shape)
    dB = _sum_to(dpre.sum(axis=0).sum(axis=-2), W.shape[:-1])
    dX = np.moveaxis(dpre @ Wx, 0, -2)
    grads = {}
    for k, g in enumerate(GATES):
        grads[f"W{g}"] = np.concatenate([dWh[..., k * h:(k + 1) * h, :], dWx[..., k * h:(k + 1) * h, :]], axis=-1)
        grads[f"B{g}"] = dB[..., k * h:(k + 1) * h]
    return grads, dX


# ---------------------------------------------------------------- dense


def dense_forward(X, W, b):
    return X @ W + np.expand_dims(b, -2), X


def dense_backward(X, W, dY):
    dW = _sum_to(_T(X) @ dY, W.shape)
    db = _sum_to(dY.sum(axis=-2), W.shape[:-2] + W.shape[-1:])
    return dW, db, dY @ _T(W)


# ---------------------------------------------------------------- GCN


def gcn_layer_forward(H, L, W, b, H_remote=None, L_remote=None):
    """Z = (L H + L_remote H_remote) W + b for node features ``H`` of shape (B, n, d).

    ``H_remote`` holds embeddings of nodes owned elsewhere; they are treated as
    constants by :func:`gcn_layer_backward`.
    """
    if H.shape[-2] != L.shape[-1]:
        raise ValueError(f"feature rows ({H.shape[-2]}) do not match operator ({L.shape[-1]})")
    if H.shape[-1] != W.shape[0]:
        raise ValueError(f"layer expects {W.shape[0]} features, got {H.shape[-1]}")
    P = L @ H
    if H_remote is not None and L_remote is not None and L_remote.shape[-1]:
        P = P + L_remote @ H_remote
    return P @ W + b, P


def gcn_layer_backward(P, H_shape, L, W, dZ):
    """Returns (dW, db, dH) for the local node features."""
    dW = np.tensordot(P, dZ, axes=([0, 1], [0, 1])) if P.ndim == 3 else _T(P) @ dZ
    db = dZ.reshape(-1, dZ.shape[-1]).sum(axis=0)
    dP = dZ @ W.T
    dH = _T(L) @ dP
    return dW, db, dH.reshape(H_shape)


def gcn_forward(H, L, params, n_layers=None, final="sigmoid"):
    """Monolithic GCN stack: ReLU on hidden layers, ``final`` on the last one.

    ``params`` maps ``W0, b0, W1, b1, ...``. Returns the list of layer outputs
    (post-activation, the last being probabilities when ``final="sigmoid"``)
    and the pre-activation logits of the final layer.
    """
    n_layers = n_layers or sum(1 for k in params if k.startswith("W"))
    outs = []
    Z = None
    for l in range(n_layers):
        Z, _ = gcn_layer_forward(H, L, params[f"W{l}"], params[f"b{l}"])
        if l < n_layers - 1:
            H = relu(Z)
        else:
            H = sigmoid(Z) if final == "sigmoid" else relu(Z) if final == "relu" else Z
        outs.append(H)
    return outs, Z
