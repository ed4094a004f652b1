"""Probabilistic residual-PRB forecasting for multi-carrier LTE KPI series.

A compact transformer encoder-decoder with calendar and carrier embeddings
produces joint deterministic KPI forecasts plus residual-PRB quantiles;
recursive block-wise rollout extends the horizon to days.
"""

from .model import ForecastModel, Hyperparams, param_count
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "ForecastModel", "Hyperparams", "param_count",
    "TrainConfig", "train", "save_checkpoint", "load_checkpoint",
]

__version__ = "0.1.0"
