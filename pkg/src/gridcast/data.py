"""
Per-building preprocessing: CSV ingest, 1-minute resampling, gap filling,
min-max scaling and sliding-window supervised framing.

Missing values are carried as NaN from parsing through resampling and are
removed by :func:`fill_gaps`.
"""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    EmptyInputError,
    InvalidRangeError,
    LoadError,
    SchemaError,
    UnfillableColumnError,
)

log = logging.getLogger(__name__)

FEATURES = ("i_a", "i_b", "i_c", "v_a", "v_b", "v_c", "pf", "freq")
N_FEATURES = len(FEATURES)
TARGET = "freq"
STEP = np.timedelta64(60, "s")

DEFAULT_TIMESTAMP_COL = "UpdateTime"
DEFAULT_FEATURE_COLS = ("Ia", "Ib", "Ic", "Va", "Vb", "Vc", "PF", "Freq")


@dataclass(frozen=True)
class ColumnMapping:
    """Raw CSV header names for the timestamp and the eight features (in FEATURES order)."""

    timestamp: str = DEFAULT_TIMESTAMP_COL
    features: tuple[str, ...] = DEFAULT_FEATURE_COLS

    def __post_init__(self):
        if len(self.features) != N_FEATURES:
            raise SchemaError(
                f"column mapping needs {N_FEATURES} feature columns, got {len(self.features)}"
            )


@dataclass(frozen=True)
class RawRecord:
    timestamp: np.datetime64
    i_a: float
    i_b: float
    i_c: float
    v_a: float
    v_b: float
    v_c: float
    pf: float
    freq: float


@dataclass(frozen=True)
class RawRecords:
    """Columnar batch of raw records.

    ``timestamps`` is datetime64[ns]; ``values`` is float64 [n, 8] with NaN
    marking missing cells.  Indexing yields :class:`RawRecord`.
    """

    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.timestamps), N_FEATURES):
            raise SchemaError(f"values shape {self.values.shape} does not match timestamps")

    def __len__(self):
        return len(self.timestamps)

    def __getitem__(self, k: int) -> RawRecord:
        return RawRecord(self.timestamps[k], *(float(v) for v in self.values[k]))

    @classmethod
    def from_records(cls, records: Sequence[RawRecord]) -> "RawRecords":
        ts = np.array([r.timestamp for r in records], dtype="datetime64[ns]")
        vals = np.array(
            [[getattr(r, name) for name in FEATURES] for r in records], dtype=np.float64
        ).reshape(len(records), N_FEATURES)
        return cls(ts, vals)

    def take(self, order: np.ndarray) -> "RawRecords":
        return RawRecords(self.timestamps[order], self.values[order])


def parse_csv(path, schema: ColumnMapping = ColumnMapping()) -> RawRecords:
    """Load the mapped columns of a raw building CSV, sorted by timestamp.

    Unmapped columns are ignored; unparseable numeric cells become NaN.
    Rows whose timestamp cannot be parsed are dropped with a warning.
    """
    path = Path(path)
    try:
        header = pd.read_csv(path, nrows=0).columns
    except pd.errors.EmptyDataError:
        raise EmptyInputError(f"{path}: file is empty") from None
    wanted = [schema.timestamp, *schema.features]
    for col in wanted:
        if col not in header:
            raise SchemaError(f"{path}: missing column {col!r}")

    df = pd.read_csv(path, usecols=wanted, dtype=str, keep_default_na=False)
    if df.empty:
        raise EmptyInputError(f"{path}: no data rows")

    ts = pd.to_datetime(df[schema.timestamp].str.strip(), format="ISO8601", errors="coerce")
    if getattr(ts.dt, "tz", None) is not None:
        ts = ts.dt.tz_convert("UTC").dt.tz_localize(None)
    values = np.column_stack(
        [pd.to_numeric(df[c].str.strip(), errors="coerce").to_numpy(np.float64) for c in schema.features]
    )
    ok = ts.notna().to_numpy()
    if not ok.all():
        log.warning("%s: dropped %d rows with unparseable timestamps", path, int((~ok).sum()))
    stamps = ts.to_numpy(dtype="datetime64[ns]")[ok]
    values = values[ok]
    order = np.argsort(stamps, kind="stable")
    return RawRecords(stamps[order], values[order])


@dataclass(frozen=True, eq=False)
class TimeSeriesFrame:
    """Uniform 1-minute table of the eight features; row k is at ``start + k`` minutes."""

    start: np.datetime64
    values: np.ndarray
    building_id: str = ""
    columns: tuple[str, ...] = FEATURES

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] != len(self.columns):
            raise SchemaError(f"frame values must be [n, {len(self.columns)}], got {vals.shape}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "start", np.datetime64(self.start, "m"))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def step(self) -> np.timedelta64:
        return STEP

    def times(self) -> np.ndarray:
        return self.start + np.arange(self.n_rows).astype("timedelta64[m]")

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.columns.index(name)]
        except ValueError:
            raise SchemaError(f"unknown column {name!r}") from None

    def replace_values(self, values: np.ndarray) -> "TimeSeriesFrame":
        return TimeSeriesFrame(self.start, values, self.building_id, self.columns)

    def __eq__(self, other):
        if not isinstance(other, TimeSeriesFrame):
            return NotImplemented
        return (
            self.start == other.start
            and self.columns == other.columns
            and self.building_id == other.building_id
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    def to_csv(self, path) -> None:
        write_text_atomic(path, self.to_csv_text())

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        buf.write("timestamp," + ",".join(self.columns) + "\n")
        stamps = np.datetime_as_string(self.times(), unit="s")
        for stamp, row in zip(stamps, self.values):
            buf.write(stamp.replace("T", " ") + "," + ",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path, building_id: str = "") -> "TimeSeriesFrame":
        df = pd.read_csv(path, float_precision="round_trip")
        if df.empty:
            raise EmptyInputError(f"{path}: frame file has no rows")
        stamps = pd.to_datetime(df["timestamp"], format="ISO8601").to_numpy("datetime64[m]")
        if len(stamps) > 1 and np.any(np.diff(stamps) != np.timedelta64(1, "m")):
            raise SchemaError(f"{path}: frame rows are not on a contiguous 1-minute grid")
        cols = tuple(c for c in df.columns if c != "timestamp")
        return cls(stamps[0], df[list(cols)].to_numpy(np.float64), building_id, cols)


def resample_1min(records: RawRecords, building_id: str = "") -> TimeSeriesFrame:
    """Average records into 1-minute bins from the first to the last record's minute.

    Empty minutes are NaN.  Records are put in a canonical order first so the
    result does not depend on input order, down to the last bit.
    """
    if len(records) == 0:
        raise EmptyInputError("no records to resample")
    ts = records.timestamps.astype("datetime64[ns]")
    valid = ~np.isnat(ts)
    if not valid.any():
        raise EmptyInputError("no records with a valid timestamp")
    ts = ts[valid]
    vals = records.values[valid]

    keys = [vals[:, j] for j in reversed(range(N_FEATURES))] + [ts.view(np.int64)]
    order = np.lexsort(keys)
    ts, vals = ts[order], vals[order]

    minutes = ts.astype("datetime64[m]")
    start = minutes[0]
    bins = (minutes - start).astype(np.int64)
    n_rows = int(bins[-1]) + 1

    out = np.full((n_rows, N_FEATURES), np.nan)
    for j in range(N_FEATURES):
        col = vals[:, j]
        have = ~np.isnan(col)
        sums = np.bincount(bins[have], weights=col[have], minlength=n_rows)
        counts = np.bincount(bins[have], minlength=n_rows)
        filled = counts > 0
        out[filled, j] = sums[filled] / counts[filled]
    return TimeSeriesFrame(start, out, building_id)


@dataclass
class GapReport:
    """Runs of consecutive missing cells per column, in row order."""

    runs: dict[str, list[int]] = field(default_factory=dict)

    @property
    def total_missing(self) -> int:
        return sum(sum(r) for r in self.runs.values())

    def longest(self, column: str) -> int:
        return max(self.runs.get(column, []), default=0)


def _missing_runs(mask: np.ndarray) -> list[int]:
    if not mask.any():
        return []
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return (stops - starts).tolist()


def fill_gaps(frame: TimeSeriesFrame) -> tuple[TimeSeriesFrame, GapReport]:
    """Linear interpolation inside each column, nearest valid value at the edges."""
    values = np.array(frame.values)
    rows = np.arange(frame.n_rows, dtype=np.float64)
    report = GapReport()
    for j, name in enumerate(frame.columns):
        col = values[:, j]
        missing = np.isnan(col)
        report.runs[name] = _missing_runs(missing)
        if not missing.any():
            continue
        if missing.all():
            raise UnfillableColumnError(f"column {name!r} has no valid values")
        # np.interp clamps to the end values outside the known range.
        col[missing] = np.interp(rows[missing], rows[~missing], col[~missing])
    return frame.replace_values(values), report


@dataclass(frozen=True, eq=False)
class ScalerParams:
    columns: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray
    fit_rows: tuple[int, int] = (0, 0)

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64)
        maxs = np.asarray(self.maxs, dtype=np.float64)
        if mins.shape != (len(self.columns),) or maxs.shape != mins.shape:
            raise SchemaError("scaler min/max must have one entry per column")
        if np.any(maxs < mins):
            raise SchemaError("scaler max < min")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @property
    def constant(self) -> np.ndarray:
        return self.maxs == self.mins

    def index(self, column: str) -> int:
        try:
            return self.columns.index(column)
        except ValueError:
            raise SchemaError(f"column {column!r} not in scaler") from None

    def __eq__(self, other):
        if not isinstance(other, ScalerParams):
            return NotImplemented
        return (
            self.columns == other.columns
            and np.array_equal(self.mins, other.mins)
            and np.array_equal(self.maxs, other.maxs)
            and tuple(self.fit_rows) == tuple(other.fit_rows)
        )

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "min": [float(v) for v in self.mins],
            "max": [float(v) for v in self.maxs],
            "constant": [bool(v) for v in self.constant],
            "fit_rows": list(self.fit_rows),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScalerParams":
        try:
            return cls(tuple(d["columns"]), d["min"], d["max"], tuple(d.get("fit_rows", (0, 0))))
        except KeyError as e:
            raise LoadError(f"scaler file missing field {e.args[0]!r}") from None


def fit_scaler(frame: TimeSeriesFrame, fit_range: tuple[int, int] | None = None) -> ScalerParams:
    """Per-column min/max over rows ``[start, stop)`` only."""
    start, stop = (0, frame.n_rows) if fit_range is None else fit_range
    if not (0 <= start < stop <= frame.n_rows):
        raise InvalidRangeError(f"fit range [{start}, {stop}) invalid for {frame.n_rows} rows")
    block = frame.values[start:stop]
    return ScalerParams(frame.columns, block.min(axis=0), block.max(axis=0), (start, stop))


def scale_values(values: np.ndarray, scaler: ScalerParams) -> np.ndarray:
    span = scaler.maxs - scaler.mins
    safe = np.where(scaler.constant, 1.0, span)
    out = (values - scaler.mins) / safe
    # constant columns map to 0 regardless of the incoming value
    return np.where(scaler.constant, 0.0, out)


def apply_scaler(frame: TimeSeriesFrame, scaler: ScalerParams) -> TimeSeriesFrame:
    """Min-max map each column; values outside the fitted range may leave [0, 1]."""
    if tuple(frame.columns) != tuple(scaler.columns):
        raise SchemaError(f"scaler columns {scaler.columns} do not match frame {frame.columns}")
    return frame.replace_values(scale_values(frame.values, scaler))


def invert_scaler(values, scaler: ScalerParams, column: str = TARGET) -> np.ndarray:
    j = scaler.index(column)
    values = np.asarray(values, dtype=np.float64)
    return values * (scaler.maxs[j] - scaler.mins[j]) + scaler.mins[j]


@dataclass(frozen=True, eq=False)
class WindowedDataset:
    """Supervised pairs: ``inputs[j]`` is rows j..j+L-1, ``targets[j]`` is freq at row j+L."""

    inputs: np.ndarray
    targets: np.ndarray
    window_length: int
    source_rows: np.ndarray
    target_times: np.ndarray

    @property
    def count(self) -> int:
        return len(self.targets)

    @property
    def is_empty(self) -> bool:
        return self.count == 0

    def __len__(self):
        return self.count

    def subset(self, idx) -> "WindowedDataset":
        return WindowedDataset(
            self.inputs[idx],
            self.targets[idx],
            self.window_length,
            self.source_rows[idx],
            self.target_times[idx],
        )

    def __eq__(self, other):
        if not isinstance(other, WindowedDataset):
            return NotImplemented
        return (
            self.window_length == other.window_length
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.targets, other.targets)
            and np.array_equal(self.source_rows, other.source_rows)
            and np.array_equal(self.target_times, other.target_times)
        )


def make_windows(frame: TimeSeriesFrame, window_length: int) -> WindowedDataset:
    """Slide a length-L window over the frame; all eight features (past freq too) are inputs.

    A frame with ``n_rows <= L`` gives an empty dataset (check ``is_empty``).
    """
    L = int(window_length)
    if L < 1:
        raise InvalidRangeError(f"window length must be >= 1, got {window_length}")
    target_col = frame.columns.index(TARGET)
    count = max(frame.n_rows - L, 0)
    if count == 0:
        log.warning("frame %r has %d rows, too few for window length %d", frame.building_id, frame.n_rows, L)
        return WindowedDataset(
            np.empty((0, L, len(frame.columns))),
            np.empty(0),
            L,
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype="datetime64[m]"),
        )
    view = np.lib.stride_tricks.sliding_window_view(frame.values, L, axis=0)[:count]
    inputs = np.ascontiguousarray(view.transpose(0, 2, 1))
    rows = np.arange(L, L + count, dtype=np.int64)
    targets = frame.values[rows, target_col].copy()
    return WindowedDataset(inputs, targets, L, rows, frame.times()[rows])


def chronological_split(dataset: WindowedDataset, train_fraction: float = 0.8):
    """First ``floor(count * fraction)`` windows train, the rest test; no shuffling."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidRangeError(f"train fraction must be in (0, 1), got {train_fraction}")
    n_train = int(np.floor(dataset.count * train_fraction))
    return dataset.subset(slice(0, n_train)), dataset.subset(slice(n_train, None))


def split_point(n_rows: int, window_length: int, train_fraction: float) -> tuple[int, int]:
    """Return (train window count, number of frame rows touched by training windows)."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidRangeError(f"train fraction must be in (0, 1), got {train_fraction}")
    count = max(n_rows - window_length, 0)
    n_train = int(np.floor(count * train_fraction))
    return n_train, min(n_train + window_length, n_rows)


_DS_MAGIC = b"GCWIN1"
_DS_VERSION = 1
_DS_HEADER = struct.Struct("<6sIQII")


def dataset_to_bytes(ds: WindowedDataset) -> bytes:
    n_feat = ds.inputs.shape[2]
    parts = [
        _DS_HEADER.pack(_DS_MAGIC, _DS_VERSION, ds.count, ds.window_length, n_feat),
        ds.target_times.astype("datetime64[m]").astype("<i8").tobytes(),
        ds.source_rows.astype("<i8").tobytes(),
        ds.inputs.astype("<f8").tobytes(),
        ds.targets.astype("<f8").tobytes(),
    ]
    return b"".join(parts)


def dataset_from_bytes(blob: bytes, source: str = "<bytes>") -> WindowedDataset:
    if len(blob) < _DS_HEADER.size:
        raise LoadError(f"{source}: truncated header")
    magic, version, count, L, n_feat = _DS_HEADER.unpack_from(blob)
    if magic != _DS_MAGIC:
        raise LoadError(f"{source}: bad magic {magic!r}")
    if version != _DS_VERSION:
        raise LoadError(f"{source}: unsupported version {version}")
    sizes = [count * 8, count * 8, count * L * n_feat * 8, count * 8]
    if len(blob) != _DS_HEADER.size + sum(sizes):
        raise LoadError(f"{source}: payload length does not match header count={count}")
    off = _DS_HEADER.size
    out = []
    for size in sizes:
        out.append(blob[off:off + size])
        off += size
    times = np.frombuffer(out[0], "<i8").astype("datetime64[m]")
    rows = np.frombuffer(out[1], "<i8").astype(np.int64)
    inputs = np.frombuffer(out[2], "<f8").reshape(count, L, n_feat).astype(np.float64)
    targets = np.frombuffer(out[3], "<f8").astype(np.float64)
    return WindowedDataset(inputs, targets, L, rows, times)


def save_dataset(ds: WindowedDataset, path) -> None:
    write_bytes_atomic(path, dataset_to_bytes(ds))


def load_dataset(path) -> WindowedDataset:
    path = Path(path)
    return dataset_from_bytes(path.read_bytes(), str(path))


def write_bytes_atomic(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def write_text_atomic(path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))
