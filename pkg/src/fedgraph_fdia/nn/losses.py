import numpy as np
from scipy.special import expit

EPS_CLIP = 1e-7


def binary_cross_entropy(p, y, eps=EPS_CLIP):
    """Mean BCE over all entries with probabilities clamped to [eps, 1 - eps]."""
    p = np.clip(np.asarray(p, dtype=float), eps, 1.0 - eps)
    y = np.asarray(y, dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def bce_with_logits(z, y):
    """Mean BCE of sigmoid(z) against y and its gradient w.r.t. z.

    Same value as :func:`binary_cross_entropy` wherever the clamp is inactive,
    but stays finite and keeps a non-zero gradient for saturated logits.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    if z.shape != y.shape:
        raise ValueError(f"shape mismatch: {z.shape} vs {y.shape}")
    # softplus(z) - y z, overflow-safe
    loss = np.logaddexp(0.0, z) - y * z
    return float(loss.mean()), (expit(z) - y) / z.size
