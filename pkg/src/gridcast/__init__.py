"""ConvLSTM grid-frequency forecasting: preprocessing, numpy layers with handwritten
backward passes, Adam training, weighted ensembles and evaluation."""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    FEATURES,
    ColumnMapping,
    RawRecord,
    RawRecords,
    ScalerParams,
    TimeSeriesFrame,
    WindowedDataset,
    apply_scaler,
    chronological_split,
    fill_gaps,
    fit_scaler,
    invert_scaler,
    make_windows,
    parse_csv,
    resample_1min,
)
from .ensemble import (  # noqa: E402
    DEFAULT_WEIGHTS,
    EnsembleSpec,
    MetricsReport,
    evaluate_report,
    metric_mae,
    metric_mape,
    metric_mse,
    predict_ensemble,
)
from .model import PRESETS, ConvLSTMConfig, ModelParams, build_model, forward, forward_backward  # noqa: E402
from .training import AdamState, LossCurve, TrainConfig, adam_step, evaluate_split, train  # noqa: E402

__all__ = [
    "__version__",
    "FEATURES",
    "ColumnMapping",
    "RawRecord",
    "RawRecords",
    "ScalerParams",
    "TimeSeriesFrame",
    "WindowedDataset",
    "apply_scaler",
    "chronological_split",
    "fill_gaps",
    "fit_scaler",
    "invert_scaler",
    "make_windows",
    "parse_csv",
    "resample_1min",
    "DEFAULT_WEIGHTS",
    "EnsembleSpec",
    "MetricsReport",
    "evaluate_report",
    "metric_mae",
    "metric_mape",
    "metric_mse",
    "predict_ensemble",
    "PRESETS",
    "ConvLSTMConfig",
    "ModelParams",
    "build_model",
    "forward",
    "forward_backward",
    "AdamState",
    "LossCurve",
    "TrainConfig",
    "adam_step",
    "evaluate_split",
    "train",
]
