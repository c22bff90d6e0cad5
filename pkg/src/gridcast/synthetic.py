"""Synthetic building data for demos and tests (no real campus data ships with the package)."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .data import DEFAULT_FEATURE_COLS, DEFAULT_TIMESTAMP_COL, FEATURES, TimeSeriesFrame


def synthetic_values(
    n_rows: int,
    seed: int = 0,
    period: float = 120.0,
    amplitude: float = 0.05,
    noise: float = 0.01,
    nominal: float = 60.0,
    load_scale: float = 1.0,
) -> np.ndarray:
    """[n_rows, 8] minute-level values whose freq column is a sinusoid plus white noise.

    Currents and power factor follow a slower load cycle; voltages sag with
    load.  Column order matches ``FEATURES``.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_rows, dtype=np.float64)
    load = load_scale * (50 + 15 * np.sin(2 * np.pi * t / 1440.0) + 5 * np.sin(2 * np.pi * t / 97.0))
    currents = [load * (1 + 0.05 * k) + rng.normal(0, 1.0, n_rows) for k in range(3)]
    voltages = [220 - 0.05 * load * (1 + 0.1 * k) + rng.normal(0, 0.3, n_rows) for k in range(3)]
    pf = np.clip(0.92 + 0.03 * np.sin(2 * np.pi * t / 300.0) + rng.normal(0, 0.005, n_rows), -1, 1)
    freq = nominal + amplitude * np.sin(2 * np.pi * t / period) + rng.normal(0, noise, n_rows)
    return np.column_stack([*currents, *voltages, pf, freq])


def synthetic_frame(n_rows: int, seed: int = 0, building_id: str = "SYN", **kw) -> TimeSeriesFrame:
    return TimeSeriesFrame(np.datetime64("2022-10-01T00:00"), synthetic_values(n_rows, seed, **kw), building_id)


def synthetic_raw_csv(
    path,
    n_minutes: int,
    seed: int = 0,
    start: str = "2022-10-01 00:00:00",
    drop_fraction: float = 0.02,
    extra_columns: int = 20,
    **kw,
) -> pd.DataFrame:
    """Write an irregularly sampled raw CSV: 1-3 readings per minute, some minutes absent,
    a few blank cells, and ``extra_columns`` unrelated columns (timestamp + 8 + 20 = 29 by default)."""
    rng = np.random.default_rng(seed + 10_000)
    minute_values = synthetic_values(n_minutes, seed, **kw)
    base = np.datetime64(start.replace(" ", "T"), "s")
    rows_ts, rows_vals = [], []
    for m in range(n_minutes):
        if 0 < m < n_minutes - 1 and rng.random() < drop_fraction:
            continue
        k = int(rng.integers(1, 4))
        offsets = np.sort(rng.choice(60, size=k, replace=False))
        for off in offsets:
            rows_ts.append(base + np.timedelta64(60 * m + int(off), "s"))
            rows_vals.append(minute_values[m] + rng.normal(0, 1e-4, len(FEATURES)))
    df = pd.DataFrame(np.array(rows_vals), columns=list(DEFAULT_FEATURE_COLS))
    df.insert(0, DEFAULT_TIMESTAMP_COL, pd.to_datetime(np.array(rows_ts)).strftime("%Y-%m-%d %H:%M:%S"))
    for j in range(extra_columns):
        df[f"Aux{j:02d}"] = rng.normal(size=len(df)).round(4)
    blanks = rng.random(len(df)) < 0.002
    blanks[0] = blanks[-1] = False
    df = df.astype({"Freq": object})
    df.loc[blanks, "Freq"] = ""
    df.to_csv(path, index=False)
    return df
