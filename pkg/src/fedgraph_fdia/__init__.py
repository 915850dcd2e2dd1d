"""Federated LSTM+GCN detection and localization of false data injection attacks."""

from .estimators import FedGraphDetector, FedLSTMDetector, FedMLPDetector
from .preprocessing import BusWindowScaler

__version__ = "0.1.0"
__all__ = ["FedGraphDetector", "FedLSTMDetector", "FedMLPDetector", "BusWindowScaler"]
