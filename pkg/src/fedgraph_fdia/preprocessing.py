"""Per-bus standardization of measurement windows."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted


def check_windows(X, n_buses=None, window=None, n_features=None, name="X"):
    """Validate a (samples, buses, timesteps, features) window array; returns float64."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 4:
        raise ValueError(f"{name} must be 4-D (samples, buses, timesteps, features), got shape {X.shape}")
    for axis, want, what in ((1, n_buses, "buses"), (2, window, "timesteps"), (3, n_features, "features")):
        if want is not None and X.shape[axis] != want:
            raise ValueError(f"{name} has {X.shape[axis]} {what}, expected {want}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} has no samples")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    return X


class BusWindowScaler(TransformerMixin, BaseEstimator):
    """Z-score each (bus, feature) channel.

    Statistics come from the history part of the windows (all timesteps but
    the last), so they are unaffected by attacks, which only touch the final
    step. Each bus only needs its own data, so every federated client can fit
    its share locally. Channels with zero spread (buses without load) keep
    unit scale.
    """

    def fit(self, X, y=None):
        X = check_windows(X)
        hist = X[:, :, :-1, :] if X.shape[2] > 1 else X
        self.mean_ = hist.mean(axis=(0, 2))
        std = hist.std(axis=(0, 2))
        self.scale_ = np.where(std > 0, std, 1.0)
        self.n_buses_, self.n_features_ = self.mean_.shape
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_windows(X, self.n_buses_, n_features=self.n_features_)
        return (X - self.mean_[None, :, None, :]) / self.scale_[None, :, None, :]
