"""Kolmogorov-Arnold network engine and EV charger attack-detection pipeline."""

from .network import KanNetwork, classify, init_network, load_model, network_forward, save_model
from .spline import SplineGrid, basis_derivative, basis_eval, fit_coefficients, make_grid
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "KanNetwork",
    "SplineGrid",
    "TrainConfig",
    "basis_derivative",
    "basis_eval",
    "classify",
    "evaluate",
    "fit_coefficients",
    "init_network",
    "load_model",
    "make_grid",
    "network_forward",
    "save_model",
    "train",
]
