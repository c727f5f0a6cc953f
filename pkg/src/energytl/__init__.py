"""Data-centric transfer-learning benchmark engine for building energy
load forecasting: minimal autodiff tensors, three transformer forecasters,
hourly-panel data pipeline, dataset combination, strategy orchestration
and table reporting.
"""

from . import kernels
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    EnergyTLError,
    FormatError,
    NumericError,
    PlanError,
    TrainingError,
)
from .rng import RunRng
from .tensor import Tensor, matmul, softmax, layer_norm, dropout, patchify, mse_loss

__version__ = "0.1.0"

__all__ = [
    "kernels",
    "RunRng",
    "Tensor",
    "matmul",
    "softmax",
    "layer_norm",
    "dropout",
    "patchify",
    "mse_loss",
    "EnergyTLError",
    "DimensionError",
    "NumericError",
    "ContractError",
    "ConfigError",
    "DataError",
    "FormatError",
    "PlanError",
    "TrainingError",
    "__version__",
]
