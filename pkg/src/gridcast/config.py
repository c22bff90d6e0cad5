"""
Run configuration: one INI document with a ``[run]`` section and one
``[building <id>]`` section per building.

Example::

    [run]
    train_fraction = 0.8
    seed = 0
    ensemble_weights = A:0.3, B:0.4, C:0.3
    output_dir = out

    [building A]
    csv_path = raw/A.csv
    timestamp_col = UpdateTime
    feature_cols = Ia, Ib, Ic, Va, Vb, Vc, PF, Freq
    preset = A

Unset numeric fields fall back to the building preset (window length,
architecture, epochs) or to package defaults.  Every value is tagged
``preset``, ``default`` or ``override`` so run metadata shows where it came from.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .data import DEFAULT_FEATURE_COLS, DEFAULT_TIMESTAMP_COL, ColumnMapping
from .ensemble import DEFAULT_WEIGHTS, EnsembleSpec
from .errors import ConfigError, EnsembleSpecError
from .model import ConvLSTMConfig, preset
from .training import EPOCH_PRESETS, TrainConfig

DEFAULT_TRAIN_FRACTION = 0.8
DEFAULT_SEED = 0
DEFAULT_OUTPUT_DIR = "gridcast_out"

BUILDING_KEYS = {
    "csv_path",
    "timestamp_col",
    "feature_cols",
    "window_length",
    "preset",
    "epochs",
    "learning_rate",
    "batch_size",
    "loss",
    "seed",
}
RUN_KEYS = {"ensemble_weights", "train_fraction", "seed", "output_dir"}


@dataclass(frozen=True)
class BuildingConfig:
    building_id: str
    csv_path: Path
    mapping: ColumnMapping
    window_length: int
    preset: str
    train: TrainConfig
    seed: int
    provenance: dict = field(default_factory=dict, compare=False)

    @property
    def model_config(self) -> ConvLSTMConfig:
        return replace(preset(self.preset), window_length=self.window_length)

    @property
    def init_seed(self) -> int:
        return self.seed

    def metadata(self) -> dict:
        return {
            "building_id": self.building_id,
            "csv_path": str(self.csv_path),
            "timestamp_col": self.mapping.timestamp,
            "feature_cols": list(self.mapping.features),
            "preset": self.preset,
            "window_length": self.window_length,
            "seed": self.seed,
            "train": self.train.to_dict(),
            "provenance": dict(self.provenance),
        }


@dataclass(frozen=True)
class RunConfig:
    buildings: dict[str, BuildingConfig]
    ensemble: EnsembleSpec | None
    train_fraction: float
    seed: int
    output_dir: Path
    provenance: dict = field(default_factory=dict, compare=False)

    def building(self, building_id: str) -> BuildingConfig:
        try:
            return self.buildings[building_id]
        except KeyError:
            raise ConfigError(
                f"building {building_id!r} not configured; have {sorted(self.buildings)}"
            ) from None

    def metadata(self) -> dict:
        return {
            "train_fraction": self.train_fraction,
            "seed": self.seed,
            "ensemble_weights": dict(self.ensemble.members) if self.ensemble else None,
            "provenance": dict(self.provenance),
        }


def _tag(given: bool, value, reference) -> str:
    if not given:
        return "preset" if reference is not None else "default"
    return "override" if reference is None or value != reference else "preset"


def parse_weights(text: str) -> dict[str, float]:
    """Parse ``A:0.3, B:0.4`` (``=`` also accepted)."""
    out = {}
    for item in text.replace(";", ",").split(","):
        item = item.strip()
        if not item:
            continue
        sep = ":" if ":" in item else "="
        try:
            name, value = item.split(sep, 1)
            out[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"cannot parse ensemble weight {item!r}") from None
    if not out:
        raise ConfigError("empty ensemble_weights")
    return out


def _building(section: configparser.SectionProxy, bid: str, base_dir: Path, run_seed: int, seed_given: bool):
    unknown = set(section) - BUILDING_KEYS
    if unknown:
        raise ConfigError(f"[building {bid}]: unknown keys {sorted(unknown)}")
    if "csv_path" not in section:
        raise ConfigError(f"[building {bid}]: csv_path is required")
    prov = {}
    preset_name = section.get("preset", bid)
    arch = preset(preset_name)
    prov["preset"] = "preset" if "preset" not in section else _tag(True, preset_name, bid)

    def get(key, conv, reference, default=None):
        given = key in section
        value = conv(section[key]) if given else (reference if reference is not None else default)
        prov[key] = _tag(given, value, reference)
        return value

    try:
        L = get("window_length", int, arch.window_length)
        epochs = get("epochs", int, EPOCH_PRESETS.get(preset_name))
        lr = get("learning_rate", float, 1e-4)
        batch = get("batch_size", int, None, 32)
        loss = get("loss", str.strip, None, "mse")
        seed = get("seed", int, None, run_seed)
    except ValueError as e:
        raise ConfigError(f"[building {bid}]: {e}") from None
    if "seed" not in section:
        prov["seed"] = "override" if seed_given else "default"
    cols = section.get("feature_cols")
    features = tuple(c.strip() for c in cols.split(",")) if cols else DEFAULT_FEATURE_COLS
    mapping = ColumnMapping(section.get("timestamp_col", DEFAULT_TIMESTAMP_COL).strip(), features)
    csv_path = Path(section["csv_path"].strip())
    if not csv_path.is_absolute():
        csv_path = base_dir / csv_path
    train = TrainConfig(learning_rate=lr, epochs=epochs, batch_size=batch, loss=loss, seed=seed + 1)
    return BuildingConfig(bid, csv_path, mapping, L, preset_name, train, seed, prov)


def load_config(path, seed_override: int | None = None) -> RunConfig:
    path = Path(path)
    parser = configparser.ConfigParser()
    try:
        read = parser.read(path)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    if not read:
        raise ConfigError(f"cannot read config {path}")
    return config_from_parser(parser, path.parent, seed_override)


def config_from_parser(parser: configparser.ConfigParser, base_dir: Path, seed_override: int | None = None):
    run = parser["run"] if parser.has_section("run") else {}
    unknown = set(run) - RUN_KEYS
    if unknown:
        raise ConfigError(f"[run]: unknown keys {sorted(unknown)}")
    prov = {}
    try:
        train_fraction = float(run.get("train_fraction", DEFAULT_TRAIN_FRACTION))
        seed = int(run.get("seed", DEFAULT_SEED))
    except ValueError as e:
        raise ConfigError(f"[run]: {e}") from None
    prov["train_fraction"] = "override" if "train_fraction" in run else "default"
    prov["seed"] = "override" if "seed" in run else "default"
    if seed_override is not None:
        seed = int(seed_override)
        prov["seed"] = "override"
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")

    buildings = {}
    for name in parser.sections():
        if name == "run":
            continue
        kind, _, bid = name.partition(" ")
        if kind != "building" or not bid.strip():
            raise ConfigError(f"unexpected section [{name}]; use [run] or [building <id>]")
        bid = bid.strip()
        seed_given = seed_override is not None or "seed" in run
        buildings[bid] = _building(parser[name], bid, base_dir, seed, seed_given)
    if not buildings:
        raise ConfigError("config defines no [building <id>] sections")

    if "ensemble_weights" in run:
        weights = parse_weights(run["ensemble_weights"])
        prov["ensemble_weights"] = "preset" if weights == DEFAULT_WEIGHTS else "override"
    elif set(DEFAULT_WEIGHTS) <= set(buildings):
        weights = dict(DEFAULT_WEIGHTS)
        prov["ensemble_weights"] = "preset"
    else:
        # no usable default; the ensemble command reports this if it is run
        weights = None
    spec = None
    if weights is not None:
        try:
            spec = EnsembleSpec.from_mapping(weights)
        except EnsembleSpecError as e:
            raise ConfigError(f"ensemble_weights: {e}") from None
        missing = [n for n in spec.names if n not in buildings]
        if missing:
            raise ConfigError(f"ensemble_weights name unknown buildings {missing}")
    out = Path(run.get("output_dir", DEFAULT_OUTPUT_DIR))
    if not out.is_absolute():
        out = base_dir / out
    return RunConfig(buildings, spec, train_fraction, seed, out, prov)
