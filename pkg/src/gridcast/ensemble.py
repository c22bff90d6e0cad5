"""Weighted-average ensembling of building models and MSE / MAE / MAPE reports."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import TARGET, ScalerParams, WindowedDataset, invert_scaler
from .errors import AlignmentError, EmptyInputError, EnsembleSpecError, ShapeError, UndefinedMetricError
from .model import ModelParams, predict

DEFAULT_WEIGHTS = {"A": 0.3, "B": 0.4, "C": 0.3}
MAPE_ZERO_GUARD = 1e-12


@dataclass(frozen=True)
class EnsembleSpec:
    members: tuple[tuple[str, float], ...]

    def __post_init__(self):
        if not self.members:
            raise EnsembleSpecError("ensemble needs at least one member")
        weights = [w for _, w in self.members]
        if any(not np.isfinite(w) or w < 0 for w in weights):
            raise EnsembleSpecError(f"weights must be finite and >= 0, got {weights}")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise EnsembleSpecError(f"weights must sum to 1, got {sum(weights)!r}")

    @classmethod
    def from_mapping(cls, weights: dict[str, float]) -> "EnsembleSpec":
        return cls(tuple((k, float(w)) for k, w in weights.items()))

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.members]

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.members])


DEFAULT_SPEC = EnsembleSpec.from_mapping(DEFAULT_WEIGHTS)


def combine(member_preds, weights) -> np.ndarray:
    """Sum of ``w_k * p_k`` over members, rows of ``member_preds`` being members.

    The result is clipped to the per-timestamp member envelope: the exact
    convex combination always lies inside it, so this only removes
    last-bit rounding excursions.
    """
    preds = np.asarray(member_preds, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if preds.ndim != 2 or preds.shape[0] != len(weights):
        raise ShapeError(f"member predictions {preds.shape} vs {len(weights)} weights")
    EnsembleSpec(tuple((str(k), float(w)) for k, w in enumerate(weights)))
    acc = weights[0] * preds[0]
    for w, p in zip(weights[1:], preds[1:]):
        acc = acc + w * p
    return np.clip(acc, preds.min(axis=0), preds.max(axis=0))


def align_windows(datasets: Sequence[WindowedDataset]) -> list[WindowedDataset]:
    """Trim every dataset to the target timestamps they all share."""
    if not datasets:
        return []
    common = datasets[0].target_times
    for ds in datasets[1:]:
        common = np.intersect1d(common, ds.target_times)
    if len(common) == 0:
        raise AlignmentError("members share no target timestamps")
    return [ds.subset(np.isin(ds.target_times, common)) for ds in datasets]


def check_aligned(datasets: Sequence[WindowedDataset]) -> None:
    ref = datasets[0].target_times
    for k, ds in enumerate(datasets[1:], start=1):
        if ds.target_times.shape != ref.shape or not np.array_equal(ds.target_times, ref):
            bad = np.setxor1d(ref, ds.target_times)
            rng = f"{bad.min()} .. {bad.max()}" if len(bad) else "order differs"
            raise AlignmentError(f"member {k} target timestamps differ from member 0: {rng}")


@dataclass
class EnsemblePrediction:
    times: np.ndarray
    names: list[str]
    member_preds: np.ndarray  # [members, n]
    ensemble: np.ndarray


def predict_ensemble(
    members: Sequence[tuple[ModelParams, float]],
    windows: Sequence[WindowedDataset],
    names: Sequence[str] | None = None,
    to_common: Sequence[Callable[[np.ndarray], np.ndarray] | None] | None = None,
) -> EnsemblePrediction:
    """Eval-mode prediction of every member, then the weighted sum per timestamp.

    ``windows[k]`` feeds member k and must target the same timestamps as the
    others (see :func:`align_windows`).  ``to_common[k]`` optionally maps a
    member's outputs into a shared space before combining, e.g. when each
    member was scaled with its own building's scaler.
    """
    if len(members) != len(windows):
        raise ShapeError(f"{len(members)} members but {len(windows)} window sets")
    names = list(names) if names is not None else [str(k) for k in range(len(members))]
    spec = EnsembleSpec(tuple((n, float(w)) for n, (_, w) in zip(names, members)))
    check_aligned(windows)
    preds = []
    for k, ((params, _), ds) in enumerate(zip(members, windows)):
        p = predict(params, ds.inputs)
        if to_common is not None and to_common[k] is not None:
            p = to_common[k](p)
        preds.append(p)
    preds = np.array(preds)
    return EnsemblePrediction(windows[0].target_times, names, preds, combine(preds, spec.weights))


# -- metrics ---------------------------------------------------------------

def _pair(pred, actual):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    actual = np.asarray(actual, dtype=np.float64).ravel()
    if pred.shape != actual.shape:
        raise ShapeError(f"{pred.size} predictions vs {actual.size} actuals")
    if pred.size == 0:
        raise EmptyInputError("metric over zero samples")
    return pred, actual


def metric_mse(pred, actual) -> float:
    pred, actual = _pair(pred, actual)
    return float(np.mean((pred - actual) ** 2))


def metric_mae(pred, actual) -> float:
    pred, actual = _pair(pred, actual)
    return float(np.mean(np.abs(pred - actual)))


def mape_with_exclusions(pred, actual) -> tuple[float, int]:
    """MAPE as a fraction, skipping actuals with magnitude below 1e-12; returns (value, excluded)."""
    pred, actual = _pair(pred, actual)
    keep = np.abs(actual) >= MAPE_ZERO_GUARD
    if not keep.any():
        raise UndefinedMetricError("MAPE undefined: every actual value is ~0")
    return float(np.mean(np.abs((pred[keep] - actual[keep]) / actual[keep]))), int((~keep).sum())


def metric_mape(pred, actual) -> float:
    return mape_with_exclusions(pred, actual)[0]


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    mae: float
    mape: float
    n: int
    space: str = "normalized"
    mape_excluded: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise EmptyInputError("report over zero samples")
        if min(self.mse, self.mae, self.mape) < 0:
            raise ValueError("metrics must be non-negative")
        # mean(|r|)^2 <= mean(r^2); slack covers rounding when all |r| are equal
        if self.mae**2 > self.mse * (1 + 1e-9) + 1e-300:
            raise ValueError(f"inconsistent report: mae^2={self.mae**2!r} > mse={self.mse!r}")

    def as_dict(self) -> dict:
        return {
            "space": self.space,
            "n": self.n,
            "mse": self.mse,
            "mae": self.mae,
            "mape": self.mape,
            "mape_excluded": self.mape_excluded,
        }


def metrics(pred, actual, space: str = "normalized") -> MetricsReport:
    pred, actual = _pair(pred, actual)
    mape, excluded = mape_with_exclusions(pred, actual)
    return MetricsReport(metric_mse(pred, actual), metric_mae(pred, actual), mape, pred.size, space, excluded)


def evaluate_report(
    predictions, actuals, scaler: ScalerParams | None = None, column: str = TARGET
) -> list[MetricsReport]:
    """Normalized-space report, plus a hertz-space one when ``scaler`` is given."""
    pred, actual = _pair(predictions, actuals)
    reports = [metrics(pred, actual, "normalized")]
    if scaler is not None:
        reports.append(
            metrics(invert_scaler(pred, scaler, column), invert_scaler(actual, scaler, column), "hertz")
        )
    return reports
