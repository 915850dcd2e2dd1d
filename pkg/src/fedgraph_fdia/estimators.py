"""Scikit-learn style detectors wrapping the federated trainers.

All detectors take windows ``X`` of shape (samples, buses, timesteps, 2) and
per-bus labels ``y`` of shape (samples, buses). ``predict_proba`` returns one
attack probability per (sample, bus) pair, not the (samples, classes) layout
of single-label classifiers, and ``score`` is the aggregate F1 over all pairs.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .baselines import BaselineConfig, fit_baseline, init_baseline
from .evaluation import build_report
from .federated.client import build_clients, federated_forward
from .federated.trainer import TrainConfig, train
from .grid import GridGraph, load_case, normalized_laplacian, partition
from .model import HybridConfig
from .preprocessing import BusWindowScaler, check_windows


def check_labels(y, shape):
    y = np.asarray(y)
    if y.shape != tuple(shape):
        raise ValueError(f"y must have shape {tuple(shape)}, got {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("y must be binary (0/1)")
    return y.astype(float)


def _resolve_grid(grid):
    return grid if isinstance(grid, GridGraph) else load_case(grid)


class _DetectorMixin(ClassifierMixin):
    def _validate_fit(self, X, y):
        self.grid_ = _resolve_grid(self.grid)
        X = check_windows(X, self.grid_.n_buses)
        y = check_labels(y, X.shape[:2])
        self.scaler_ = BusWindowScaler().fit(X)
        self.window_ = X.shape[2]
        self.n_features_in_ = X.shape[3]
        return self.scaler_.transform(X), y

    def _validate_predict(self, X):
        check_is_fitted(self, "scaler_")
        X = check_windows(X, self.grid_.n_buses, self.window_, self.n_features_in_)
        return self.scaler_.transform(X)

    def predict(self, X):
        return (self.predict_proba(X) > self.threshold).astype(np.uint8)

    def score(self, X, y, sample_weight=None):
        return self.evaluate(X, y).aggregate["f1"]

    def evaluate(self, X, y, dataset=""):
        """:class:`MetricReport` on ``(X, y)``."""
        y = check_labels(y, np.shape(X)[:2])
        return build_report(self.predict_proba(X), y, self.grid_.labels, self.threshold,
                            method=self._method, dataset=dataset)


class FedGraphDetector(_DetectorMixin, BaseEstimator):
    """Federated LSTM + GCN detector trained across ``num_clients`` grid regions.

    The grid is split into connected regions; each client trains on its own
    buses, neighbouring clients exchange boundary embeddings and the server
    aggregates weight updates (see :func:`fedgraph_fdia.federated.train`).
    """

    _method = "fedgraph"

    def __init__(self, grid="ieee57", num_clients=4, partition_seed=0, lstm_units=(32, 32),
                 gcn_units=(128, 128, 1), rounds=50, lr_local=0.01, lr_server=0.001, gcn_lr=None,
                 gcn_optimizer="sgd", batch_size=64, local_epochs=1, participation=1.0, threads=1,
                 threshold=0.5, random_state=0):
        self.grid = grid
        self.num_clients = num_clients
        self.partition_seed = partition_seed
        self.lstm_units = lstm_units
        self.gcn_units = gcn_units
        self.rounds = rounds
        self.lr_local = lr_local
        self.lr_server = lr_server
        self.gcn_lr = gcn_lr
        self.gcn_optimizer = gcn_optimizer
        self.batch_size = batch_size
        self.local_epochs = local_epochs
        self.participation = participation
        self.threads = threads
        self.threshold = threshold
        self.random_state = random_state

    def train_config(self):
        return TrainConfig(rounds=self.rounds, lr_local=self.lr_local, lr_server=self.lr_server,
                           gcn_lr=self.gcn_lr, gcn_optimizer=self.gcn_optimizer,
                           batch_size=self.batch_size, local_epochs=self.local_epochs,
                           participation=self.participation, threads=self.threads,
                           seed=self.random_state)

    def fit(self, X, y, *, transcript=None, checkpoint_dir=None, resume=False, on_round=None):
        Xs, y = self._validate_fit(X, y)
        self.laplacian_ = normalized_laplacian(self.grid_)
        self.partition_ = partition(self.grid_, self.num_clients, self.partition_seed)
        model_cfg = HybridConfig(self.n_features_in_, self.lstm_units, self.gcn_units)
        result = train(self.grid_, self.partition_, Xs, y, self.train_config(), model_config=model_cfg,
                       L=self.laplacian_, transcript=transcript, checkpoint_dir=checkpoint_dir,
                       resume=resume, on_round=on_round)
        self.weights_ = result.weights
        self.server_ = result.server
        self.history_ = result.history
        self.round_losses_ = result.round_losses()
        return self

    def predict_proba(self, X, batch_size=128):
        """Attack probability per bus, computed with the federated forward pass."""
        Xs = self._validate_predict(X)
        return federated_proba(self.grid_, self.partition_, self.weights_, Xs, self.laplacian_, batch_size)


def federated_proba(grid, part, weights, X, L=None, batch_size=128):
    """Per-bus probabilities for already-scaled windows via embedding exchange."""
    L = normalized_laplacian(grid) if L is None else L
    clients = build_clients(grid, part, X[:1], np.zeros(X.shape[:2])[:1], L)
    out = np.empty(X.shape[:2])
    for s in range(0, X.shape[0], batch_size):
        chunk = X[s:s + batch_size]
        logits = federated_forward(clients, weights, [chunk[:, st.view.local_buses] for st in clients], part)
        for st, z in zip(clients, logits):
            out[s:s + chunk.shape[0], st.view.local_buses] = z
    return 0.5 * np.tanh(0.5 * out) + 0.5


class _BaselineDetector(_DetectorMixin, BaseEstimator):
    _kind = ""

    def __init__(self, grid="ieee57", hidden=None, rounds=50, lr_local=0.05, server_lr=None,
                 batch_size=64, local_epochs=1, threshold=0.5, random_state=0):
        self.grid = grid
        self.hidden = hidden
        self.rounds = rounds
        self.lr_local = lr_local
        self.server_lr = server_lr
        self.batch_size = batch_size
        self.local_epochs = local_epochs
        self.threshold = threshold
        self.random_state = random_state

    @property
    def _method(self):
        return self._kind

    def baseline_config(self):
        return BaselineConfig(self._kind, self.hidden, self.rounds, self.lr_local, self.server_lr,
                              self.batch_size, self.local_epochs, self.random_state)

    def fit(self, X, y, on_round=None):
        Xs, y = self._validate_fit(X, y)
        cfg = self.baseline_config()
        init = init_baseline(cfg, self.n_features_in_, self.window_, cfg.seed)
        self.result_ = fit_baseline(Xs, y, cfg, init=init, on_round=on_round)
        self.history_ = self.result_.history
        return self

    def predict_proba(self, X):
        Xs = self._validate_predict(X)
        return self.result_.predict_proba(Xs)


class FedLSTMDetector(_BaselineDetector):
    """Per-bus stacked LSTM clients under FedAvg; no graph information."""

    _kind = "fed_lstm"


class FedMLPDetector(_BaselineDetector):
    """Per-bus MLP clients under FedAvg; no graph information."""

    _kind = "fed_mlp"
