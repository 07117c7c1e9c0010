"""Graph heat-diffusion dynamic linear model for daily-periodic sensor forecasting."""

from __future__ import annotations

from .data_io import (DayTensor, NormStats, SpeedSeries, apply_norm, fit_norm, invert_norm, load_speeds, split_days,
                      to_day_tensor)
from .dlm_core import SlotGram, SlotHyperParams, SlotModel, build_slot_gram, map_transition, ml_transition
from .errors import GraphDLMError
from .evaluation import EvalReport, diagnostics_series, rmse
from .evidence import OptimizerConfig, fit_slot, log_evidence, train
from .forecaster import Forecast, forecast, predict, predictive_covariance
from .graph_kernels import (DiffusionGrid, GraphConfig, SensorGraph, all_pairs_shortest, build_graph, build_grid,
                            mix_kernels, read_distance_csv)
from .model import TrainedModel, load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "DayTensor", "DiffusionGrid", "EvalReport", "Forecast", "GraphConfig", "GraphDLMError", "NormStats",
    "OptimizerConfig", "SensorGraph", "SlotGram", "SlotHyperParams", "SlotModel", "SpeedSeries", "TrainedModel",
    "all_pairs_shortest", "apply_norm", "build_graph", "build_grid", "build_slot_gram", "diagnostics_series", "fit_norm", "fit_slot", "forecast", "invert_norm", "load_model",
    "load_speeds", "log_evidence", "map_transition", "mix_kernels", "ml_transition", "predict",
    "predictive_covariance", "read_distance_csv", "rmse", "save_model", "split_days", "to_day_tensor", "train",
]
