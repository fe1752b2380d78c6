"""Class-adaptive label smoothing trained with an augmented Lagrangian, plus calibration metrics."""

from .alm import AlmSettings, ConstrainedProblem, MultiplierState, NumericalFailure, solve
from .losses import LossKind, LossSelection, total_loss
from .metrics import PredictionSet, aece, accuracy, cwce, ece, temperature_search
from .penalties import PenaltyKind, penalty_derivative, penalty_value
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AlmSettings", "ConstrainedProblem", "LossKind", "LossSelection", "MultiplierState",
    "NumericalFailure", "PenaltyKind", "PredictionSet", "TrainConfig", "aece", "accuracy", "cwce",
    "ece", "penalty_derivative", "penalty_value", "solve", "temperature_search", "total_loss", "train",
]
