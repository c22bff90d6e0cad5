"""Mini-batch Adam training with per-epoch train/test loss tracking."""

from __future__ import annotations

import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import pandas as pd

from .data import WindowedDataset, write_text_atomic
from .errors import ConfigError, EmptyInputError, NonFiniteError, ShapeError
from .model import ModelParams, forward_backward, predict

log = logging.getLogger(__name__)

EPOCH_PRESETS = {"A": 1500, "B": 1500, "C": 2000}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 1500
    batch_size: int = 32
    loss: str = "mse"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    shuffle_each_epoch: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if not self.eps_adam > 0:
            raise ConfigError("eps_adam must be > 0")
        if self.loss not in ("mse", "mae"):
            raise ConfigError(f"loss must be 'mse' or 'mae', got {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        t = params.tensors()
        return cls({k: np.zeros_like(a) for k, a in t.items()}, {k: np.zeros_like(a) for k, a in t.items()}, 0)


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update.  Inputs are left untouched; returns (params, state)."""
    tensors = params.tensors()
    if set(grads) != set(tensors):
        raise ShapeError(f"gradient keys {sorted(set(grads) ^ set(tensors))} do not match parameters")
    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_t, new_m, new_v = {}, {}, {}
    for name, theta in tensors.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != {theta.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name}", tensor=name, step=t)
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        new_t[name] = theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)
        new_m[name] = m
        new_v[name] = v
    return params.with_tensors(new_t), AdamState(new_m, new_v, t)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_mse: float
    test_mse: float
    train_mae: float
    test_mae: float


CURVE_COLUMNS = ("epoch", "train_mse", "test_mse", "train_mae", "test_mae")


@dataclass
class LossCurve:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CURVE_COLUMNS) + "\n")
        for r in self.records:
            buf.write(f"{r.epoch},{r.train_mse!r},{r.test_mse!r},{r.train_mae!r},{r.test_mae!r}\n")
        return buf.getvalue()

    def to_csv(self, path) -> None:
        write_text_atomic(path, self.to_csv_text())

    @classmethod
    def from_csv(cls, path) -> "LossCurve":
        df = pd.read_csv(path, float_precision="round_trip")
        if tuple(df.columns) != CURVE_COLUMNS:
            raise ConfigError(f"{path}: expected columns {CURVE_COLUMNS}, got {tuple(df.columns)}")
        return cls([EpochRecord(int(r[0]), *map(float, r[1:])) for r in df.itertuples(index=False)])


def evaluate_split(params: ModelParams, dataset: WindowedDataset) -> tuple[float, float]:
    """(MSE, MAE) over every window in eval mode."""
    if dataset.is_empty:
        raise EmptyInputError("cannot evaluate on an empty dataset")
    r = predict(params, dataset.inputs) - dataset.targets
    return float(np.mean(r * r)), float(np.mean(np.abs(r)))


def batches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for s in range(0, n, batch_size):
        yield order[s : s + batch_size]


def train(
    params: ModelParams,
    train_set: WindowedDataset,
    test_set: WindowedDataset,
    cfg: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
):
    """Train for ``cfg.epochs`` epochs; returns (trained params, LossCurve).

    One generator seeded from ``cfg.seed`` drives both the shuffles and the
    dropout masks, so a run is fully determined by (params, data, cfg).
    """
    if train_set.is_empty:
        raise EmptyInputError("training set is empty")
    if test_set.is_empty:
        raise EmptyInputError("test set is empty")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros_like(params)
    curve = LossCurve()
    for epoch in range(1, cfg.epochs + 1):
        for b, idx in enumerate(batches(train_set.count, cfg.batch_size, rng if cfg.shuffle_each_epoch else None)):
            try:
                _, grads = forward_backward(
                    params, train_set.inputs[idx], train_set.targets[idx], cfg.loss, rng, "train"
                )
                params, state = adam_step(params, grads, state, cfg)
            except NonFiniteError as e:
                e.context.update(epoch=epoch, batch=b)
                raise NonFiniteError(f"{e} (epoch {epoch}, batch {b})", **e.context) from e
        train_mse, train_mae = evaluate_split(params, train_set)
        test_mse, test_mae = evaluate_split(params, test_set)
        rec = EpochRecord(epoch, train_mse, test_mse, train_mae, test_mae)
        if not all(np.isfinite([train_mse, test_mse, train_mae, test_mae])):
            raise NonFiniteError(f"non-finite evaluation loss at epoch {epoch}", epoch=epoch)
        curve.records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return params, curve
