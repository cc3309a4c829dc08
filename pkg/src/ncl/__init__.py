"""Neighborhood contrastive learning for windowed ICU time series.

A numpy autodiff engine, the dilated causal TCN encoder, neighborhood
masks, the NA/ND objectives with a momentum queue, data handling for
hourly clinical stays, frozen-probe evaluation and a CLI.
"""

from .exceptions import ConfigError, DataError, NCLError, NumericalError, ShapeError
from .losses import LossSpec, loss_na, loss_ncl, loss_nd
from .neighborhood import NeighborhoodSpec
from .training import TrainConfig, pretrain

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "LossSpec", "NCLError", "NeighborhoodSpec", "NumericalError", "ShapeError",
    "TrainConfig", "loss_na", "loss_ncl", "loss_nd", "pretrain",
]
