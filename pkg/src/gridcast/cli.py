"""
Command-line front end.

    gridcast ingest    --config run.ini [--building A | --all]
    gridcast train     --config run.ini [--building A | --all] [--jobs N]
    gridcast evaluate  --config run.ini --building A --split test|train|file=PATH
    gridcast ensemble  --config run.ini [--split test|train|file=PATH] [--weights A=1,B=0,C=0]
    gridcast export-curves --config run.ini [--all]
    gridcast synth     --out DIR          # synthetic three-building demo data + config

Artifacts land in the run's output directory (``--out`` overrides the
config).  Exit status is 0 only if every requested building succeeded.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import BuildingConfig, RunConfig, load_config, parse_weights
from .data import (
    FEATURES,
    TARGET,
    ScalerParams,
    TimeSeriesFrame,
    apply_scaler,
    chronological_split,
    fill_gaps,
    fit_scaler,
    invert_scaler,
    load_dataset,
    make_windows,
    parse_csv,
    resample_1min,
    save_dataset,
    scale_values,
    split_point,
    write_text_atomic,
)
from .ensemble import EnsembleSpec, align_windows, evaluate_report, predict_ensemble
from .errors import ConfigError, GridcastError
from .model import build_model, load_params, predict, save_params
from .training import LossCurve, train

log = logging.getLogger("gridcast")


# -- artifact naming -------------------------------------------------------

def frame_path(out: Path, bid: str) -> Path:
    return out / f"frame_{bid}.csv"


def dataset_path(out: Path, bid: str) -> Path:
    return out / f"dataset_{bid}.bin"


def scaler_path(out: Path, bid: str) -> Path:
    return out / f"scaler_{bid}.json"


def model_path(out: Path, bid: str) -> Path:
    return out / f"model_{bid}.clstm"


def meta_path(out: Path, bid: str) -> Path:
    return out / f"model_{bid}.meta.json"


def curve_path(out: Path, bid: str) -> Path:
    return out / f"curve_{bid}.csv"


def report_path(out: Path, scope: str) -> Path:
    return out / f"report_{scope}.txt"


def pred_path(out: Path, scope: str) -> Path:
    return out / f"pred_{scope}.csv"


# -- small helpers ---------------------------------------------------------

def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


def fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_report(sections: dict[str, dict]) -> str:
    """Key-value text with ``[section]`` headers, in insertion order."""
    lines = []
    for name, items in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {fmt(v)}" for k, v in items.items())
        lines.append("")
    return "\n".join(lines)


def save_scaler(scaler: ScalerParams, path: Path) -> None:
    write_text_atomic(path, json.dumps(scaler.to_dict(), indent=2) + "\n")


def load_scaler(path: Path) -> ScalerParams:
    return ScalerParams.from_dict(json.loads(Path(path).read_text()))


def require(path: Path, what: str) -> Path:
    if not path.exists():
        raise GridcastError(f"missing {what}: {path} (run the earlier pipeline step first)")
    return path


def preprocess(bc: BuildingConfig, csv_path: Path | None = None):
    """parse -> resample -> fill for one building's raw CSV."""
    records = parse_csv(csv_path or bc.csv_path, bc.mapping)
    frame = resample_1min(records, bc.building_id)
    frame, gaps = fill_gaps(frame)
    return records, frame, gaps


def _plots_enabled(args) -> bool:
    return not getattr(args, "no_plots", False)


# -- ingest ----------------------------------------------------------------

def ingest_building(cfg: RunConfig, bc: BuildingConfig, out: Path) -> dict:
    records, frame, gaps = preprocess(bc)
    L = bc.window_length
    n_train, fit_stop = split_point(frame.n_rows, L, cfg.train_fraction)
    if n_train < 1 or frame.n_rows - L - n_train < 1:
        raise GridcastError(
            f"{frame.n_rows} rows is too few for window length {L} and train fraction {cfg.train_fraction}"
        )
    scaler = fit_scaler(frame, (0, fit_stop))
    dataset = make_windows(apply_scaler(frame, scaler), L)

    frame.to_csv(frame_path(out, bc.building_id))
    save_dataset(dataset, dataset_path(out, bc.building_id))
    save_scaler(scaler, scaler_path(out, bc.building_id))

    vals = frame.values
    summary = {
        "building": {
            "building_id": bc.building_id,
            "source": str(bc.csv_path),
            "raw_records": len(records),
            "n_rows": frame.n_rows,
            "start": str(frame.start),
            "end": str(frame.times()[-1]),
            "window_length": L,
            "windows": dataset.count,
            "train_windows": n_train,
            "test_windows": dataset.count - n_train,
            "scaler_fit_rows": f"0..{fit_stop - 1}",
            "missing_cells_filled": gaps.total_missing,
        }
    }
    for j, name in enumerate(FEATURES):
        col = vals[:, j]
        summary[f"column {name}"] = {
            "min": float(col.min()),
            "max": float(col.max()),
            "mean": float(col.mean()),
            "std": float(col.std()),
            "gap_runs": len(gaps.runs[name]),
            "gap_cells": int(sum(gaps.runs[name])),
            "longest_gap": gaps.longest(name),
            "scaler_constant": bool(scaler.constant[j]),
        }
    write_text_atomic(out / f"summary_{bc.building_id}.txt", render_report(summary))
    return summary["building"]


def cmd_ingest(args, cfg: RunConfig, out: Path) -> int:
    failed = []
    for bid in selected_buildings(args, cfg):
        bc = cfg.building(bid)
        try:
            info = ingest_building(cfg, bc, out)
        except (GridcastError, OSError) as e:
            log.error("ingest %s (%s) failed: %s", bid, bc.csv_path, e)
            failed.append(bid)
            continue
        print(
            f"ingest {bid}: {info['raw_records']} records -> {info['n_rows']} rows, "
            f"{info['windows']} windows ({info['train_windows']} train / {info['test_windows']} test)"
        )
    return 1 if failed else 0


# -- train -----------------------------------------------------------------

def load_training_data(cfg: RunConfig, bc: BuildingConfig, out: Path):
    ds_file = require(dataset_path(out, bc.building_id), "dataset")
    dataset = load_dataset(ds_file)
    if dataset.window_length != bc.window_length:
        raise ConfigError(
            f"dataset window length {dataset.window_length} != configured {bc.window_length}; re-run ingest"
        )
    scaler = load_scaler(require(scaler_path(out, bc.building_id), "scaler"))
    train_set, test_set = chronological_split(dataset, cfg.train_fraction)
    expected_stop = int(train_set.source_rows[-1]) + 1 if train_set.count else 0
    if scaler.fit_rows[1] != expected_stop:
        raise ConfigError(
            f"scaler was fitted on rows up to {scaler.fit_rows[1]} but train split ends at {expected_stop}; "
            "train_fraction changed since ingest"
        )
    return dataset, train_set, test_set, scaler, ds_file


def train_building(cfg: RunConfig, bc: BuildingConfig, out: Path, plots: bool = True) -> dict:
    _, train_set, test_set, _, ds_file = load_training_data(cfg, bc, out)
    params = build_model(bc.model_config, bc.init_seed)
    every = max(1, bc.train.epochs // 10)

    def progress(rec):
        if rec.epoch == 1 or rec.epoch % every == 0 or rec.epoch == bc.train.epochs:
            log.info(
                "train %s epoch %d/%d: train_mse=%.6g test_mse=%.6g",
                bc.building_id, rec.epoch, bc.train.epochs, rec.train_mse, rec.test_mse,
            )

    t0 = time.perf_counter()
    params, curve = train(params, train_set, test_set, bc.train, progress)
    elapsed = time.perf_counter() - t0

    save_params(params, model_path(out, bc.building_id))
    curve.to_csv(curve_path(out, bc.building_id))
    payload = {"run": cfg.metadata(), "building": bc.metadata(), "model": asdict(bc.model_config)}
    meta = {
        "gridcast_version": __version__,
        **payload,
        "config_hash": config_hash(payload),
        "data_fingerprint": sha256_file(ds_file),
        "train_windows": train_set.count,
        "test_windows": test_set.count,
        "n_parameters": params.n_parameters(),
        "final": asdict(curve.records[-1]),
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "wall_seconds": round(elapsed, 3),
    }
    write_text_atomic(meta_path(out, bc.building_id), json.dumps(meta, indent=2, default=str) + "\n")
    if plots:
        from .plotting import plot_loss_curves

        plot_loss_curves(curve, out / f"curve_{bc.building_id}", f"ConvLSTM-{bc.building_id}")
    return meta


def _train_job(cfg: RunConfig, bid: str, out: Path, plots: bool):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        meta = train_building(cfg, cfg.building(bid), out, plots)
        return bid, meta["final"], None
    except (GridcastError, OSError, ArithmeticError) as e:
        return bid, None, str(e)


def cmd_train(args, cfg: RunConfig, out: Path) -> int:
    bids = selected_buildings(args, cfg)
    plots = _plots_enabled(args)
    jobs = max(1, int(getattr(args, "jobs", 1) or 1))
    if jobs > 1 and len(bids) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(bids))) as pool:
            results = list(pool.map(_train_job, [cfg] * len(bids), bids, [out] * len(bids), [plots] * len(bids)))
    else:
        results = [_train_job(cfg, bid, out, plots) for bid in bids]
    failed = 0
    for bid, final, err in results:
        if err is not None:
            log.error("train %s failed: %s", bid, err)
            failed += 1
        else:
            print(
                f"train {bid}: epoch {final['epoch']} train_mse={final['train_mse']:.6g} "
                f"test_mse={final['test_mse']:.6g} -> {model_path(out, bid).name}"
            )
    return 1 if failed else 0


# -- evaluate --------------------------------------------------------------

def parse_split(text: str) -> tuple[str, Path | None]:
    if text in ("train", "test"):
        return text, None
    if text.startswith("file="):
        return "file", Path(text[5:])
    raise ConfigError(f"--split must be train, test or file=PATH, got {text!r}")


def windows_for_split(cfg: RunConfig, bc: BuildingConfig, out: Path, split: str, file: Path | None):
    """Scaled windows for one building on the requested split, plus its scaler."""
    if split == "file":
        scaler = load_scaler(require(scaler_path(out, bc.building_id), "scaler"))
        _, frame, _ = preprocess(bc, file)
        ds = make_windows(apply_scaler(frame, scaler), bc.window_length)
        if ds.is_empty:
            raise GridcastError(f"{file}: too few rows for window length {bc.window_length}")
        return ds, scaler
    _, train_set, test_set, scaler, _ = load_training_data(cfg, bc, out)
    return (train_set if split == "train" else test_set), scaler


def write_predictions(path: Path, times, columns: dict[str, np.ndarray]) -> None:
    stamps = np.datetime_as_string(np.asarray(times).astype("datetime64[m]"), unit="s")
    lines = ["timestamp," + ",".join(columns)]
    for k, stamp in enumerate(stamps):
        lines.append(stamp.replace("T", " ") + "," + ",".join(repr(float(c[k])) for c in columns.values()))
    write_text_atomic(path, "\n".join(lines) + "\n")


def evaluate_building(cfg: RunConfig, bc: BuildingConfig, out: Path, split_arg: str, plots: bool = True):
    split, file = parse_split(split_arg)
    params = load_params(require(model_path(out, bc.building_id), "model"), bc.model_config)
    ds, scaler = windows_for_split(cfg, bc, out, split, file)
    pred = predict(params, ds.inputs)
    reports = evaluate_report(pred, ds.targets, scaler)
    scope = f"{bc.building_id}_{split}"
    source = str(file) if file else str(dataset_path(out, bc.building_id))
    sections = {
        "evaluation": {
            "building_id": bc.building_id,
            "split": split,
            "source": source,
            "window_length": bc.window_length,
            "first_target": str(ds.target_times[0]),
            "last_target": str(ds.target_times[-1]),
        }
    }
    for r in reports:
        sections[f"metrics {r.space}"] = r.as_dict()
    write_text_atomic(report_path(out, scope), render_report(sections))
    hz_actual = invert_scaler(ds.targets, scaler)
    hz_pred = invert_scaler(pred, scaler)
    write_predictions(
        pred_path(out, scope),
        ds.target_times,
        {"actual": hz_actual, "predicted": hz_pred, "actual_norm": ds.targets, "predicted_norm": pred},
    )
    if plots:
        from .plotting import plot_actual_vs_predicted

        plot_actual_vs_predicted(
            ds.target_times, hz_actual, {f"ConvLSTM-{bc.building_id}": hz_pred},
            out / f"pred_{scope}.png", f"Actual vs predicted, ConvLSTM-{bc.building_id} ({split})",
        )
    return reports


def cmd_evaluate(args, cfg: RunConfig, out: Path) -> int:
    failed = 0
    for bid in selected_buildings(args, cfg):
        try:
            reports = evaluate_building(cfg, cfg.building(bid), out, args.split, _plots_enabled(args))
        except (GridcastError, OSError) as e:
            log.error("evaluate %s failed: %s", bid, e)
            failed += 1
            continue
        r = reports[0]
        print(f"evaluate {bid} [{args.split}]: n={r.n} mse={r.mse:.6g} mae={r.mae:.6g} mape={r.mape:.6g}")
    return 1 if failed else 0


# -- ensemble --------------------------------------------------------------

def ensemble_frame(cfg: RunConfig, ref: BuildingConfig, out: Path, split: str, file: Path | None) -> TimeSeriesFrame:
    if split == "file":
        return preprocess(ref, file)[1]
    return TimeSeriesFrame.from_csv(require(frame_path(out, ref.building_id), "frame"), ref.building_id)


def run_ensemble(cfg: RunConfig, out: Path, split_arg: str, spec: EnsembleSpec, reference: str | None = None):
    """Score every member and the weighted ensemble on one evaluation frame.

    Each member windows the frame with its own length and scaler; member
    outputs are taken to hertz with their own scaler and then into the
    reference building's normalized space, where they are combined and scored.
    """
    split, file = parse_split(split_arg)
    ref_id = reference or spec.names[0]
    ref = cfg.building(ref_id)
    ref_scaler = load_scaler(require(scaler_path(out, ref_id), "scaler"))
    frame = ensemble_frame(cfg, ref, out, split, file)

    members, windows, to_common = [], [], []
    for name, weight in spec.members:
        bc = cfg.building(name)
        params = load_params(require(model_path(out, name), f"model for member {name}"), bc.model_config)
        scaler = load_scaler(require(scaler_path(out, name), "scaler"))
        ds = make_windows(apply_scaler(frame, scaler), bc.window_length)
        if ds.is_empty:
            raise GridcastError(f"evaluation frame too short for member {name} (L={bc.window_length})")
        members.append((params, weight))
        windows.append(ds)
        to_common.append(lambda p, s=scaler: scale_values_col(invert_scaler(p, s), ref_scaler))

    windows = align_windows(windows)
    if split in ("train", "test"):
        n_train, _ = split_point(frame.n_rows, ref.window_length, cfg.train_fraction)
        boundary = frame.start + np.timedelta64(n_train + ref.window_length, "m")
        keep = windows[0].target_times >= boundary if split == "test" else windows[0].target_times < boundary
        windows = [w.subset(keep) for w in windows]
        if windows[0].is_empty:
            raise GridcastError(f"no aligned windows in the {split} split")

    result = predict_ensemble(members, windows, spec.names, to_common)
    actual = scale_values_col(frame.column(TARGET)[windows[0].source_rows], ref_scaler)

    table = {}
    for k, name in enumerate(spec.names):
        table[name] = evaluate_report(result.member_preds[k], actual, ref_scaler)
    table["Ensemble"] = evaluate_report(result.ensemble, actual, ref_scaler)
    return result, actual, table, ref_id, ref_scaler, split, file, frame


def scale_values_col(hz, scaler: ScalerParams, column: str = TARGET) -> np.ndarray:
    j = scaler.index(column)
    padded = np.zeros((len(hz), len(scaler.columns)))
    padded[:, j] = hz
    return scale_values(padded, scaler)[:, j]


def cmd_ensemble(args, cfg: RunConfig, out: Path) -> int:
    spec = EnsembleSpec.from_mapping(parse_weights(args.weights)) if args.weights else cfg.ensemble
    if spec is None:
        raise ConfigError("no ensemble weights: set ensemble_weights in [run] or pass --weights")
    weight_source = "override" if args.weights else cfg.provenance.get("ensemble_weights", "preset")
    result, actual, table, ref_id, ref_scaler, split, file, frame = run_ensemble(
        cfg, out, args.split, spec, args.building
    )
    scope = f"ensemble_{split}"
    ens_mse = table["Ensemble"][0].mse
    member_min = min(table[n][0].mse for n in spec.names)
    sections = {
        "ensemble": {
            "split": split,
            "source": str(file) if file else str(frame_path(out, ref_id)),
            "reference_building": ref_id,
            "first_target": str(result.times[0]),
            "last_target": str(result.times[-1]),
            "n": len(actual),
            "weights_source": weight_source,
            **{f"weight_{n}": w for n, w in spec.members},
            "ensemble_mse_le_min_member": bool(ens_mse <= member_min),
        }
    }
    for space_idx, space in enumerate(("normalized", "hertz")):
        for metric in ("mse", "mae", "mape"):
            sections.setdefault(f"metrics {space}", {})[metric] = " ".join(
                f"{name}={getattr(reports[space_idx], metric)!r}" for name, reports in table.items()
            )
    for name, reports in table.items():
        for r in reports:
            sections[f"{name} {r.space}"] = r.as_dict()
    write_text_atomic(report_path(out, scope), render_report(sections))

    hz = lambda v: invert_scaler(v, ref_scaler)  # noqa: E731
    cols = {"actual": hz(actual)}
    cols.update({name: hz(result.member_preds[k]) for k, name in enumerate(spec.names)})
    cols["ensemble"] = hz(result.ensemble)
    write_predictions(pred_path(out, scope), result.times, cols)
    if _plots_enabled(args):
        from .plotting import plot_actual_vs_predicted

        plot_actual_vs_predicted(
            result.times, cols["actual"], {"ensemble": cols["ensemble"]},
            out / f"pred_{scope}.png", f"Actual vs predicted, ensemble ({split})",
        )

    header = f"{'metric':<6}" + "".join(f"{n:>14}" for n in table)
    print(header)
    for metric in ("mse", "mae", "mape"):
        print(f"{metric.upper():<6}" + "".join(f"{table[n][0].__getattribute__(metric):>14.6f}" for n in table))
    print("weights: " + ", ".join(f"{n}={w}" for n, w in spec.members) + f" ({weight_source})")
    print(f"ensemble MSE <= min member MSE: {ens_mse <= member_min}")
    return 0


# -- export-curves ---------------------------------------------------------

def cmd_export_curves(args, cfg: RunConfig, out: Path) -> int:
    dest = Path(args.dest) if args.dest else out
    dest.mkdir(parents=True, exist_ok=True)
    lines = ["building,epoch,train_mse,test_mse,train_mae,test_mae"]
    failed = 0
    for bid in selected_buildings(args, cfg):
        try:
            curve = LossCurve.from_csv(require(curve_path(out, bid), "loss curve"))
        except (GridcastError, OSError) as e:
            log.error("export-curves %s failed: %s", bid, e)
            failed += 1
            continue
        for r in curve.records:
            lines.append(f"{bid},{r.epoch},{r.train_mse!r},{r.test_mse!r},{r.train_mae!r},{r.test_mae!r}")
        if _plots_enabled(args):
            from .plotting import plot_loss_curves

            plot_loss_curves(curve, dest / f"curve_{bid}", f"ConvLSTM-{bid}")
        print(f"export-curves {bid}: {len(curve)} epochs")
    write_text_atomic(dest / "curves.csv", "\n".join(lines) + "\n")
    return 1 if failed else 0


# -- synth -----------------------------------------------------------------

SYNTH_CONFIG = """\
[run]
train_fraction = 0.8
seed = {seed}
ensemble_weights = A:0.3, B:0.4, C:0.3
output_dir = out

[building A]
csv_path = raw/A.csv
preset = A
epochs = {epochs}

[building B]
csv_path = raw/B.csv
preset = B
epochs = {epochs}

[building C]
csv_path = raw/C.csv
preset = C
epochs = {epochs}
"""


def cmd_synth(args) -> int:
    from .synthetic import synthetic_raw_csv

    root = Path(args.out or "gridcast_demo")
    (root / "raw").mkdir(parents=True, exist_ok=True)
    for k, bid in enumerate("ABC"):
        synthetic_raw_csv(root / "raw" / f"{bid}.csv", args.minutes, seed=args.seed + k, load_scale=1.0 + 0.3 * k)
        synthetic_raw_csv(root / "raw" / f"{bid}_new.csv", args.minutes // 4, seed=args.seed + 100 + k,
                          start="2022-11-01 00:00:00", load_scale=1.0 + 0.3 * k)
    (root / "run.ini").write_text(SYNTH_CONFIG.format(seed=args.seed, epochs=args.epochs))
    print(f"synthetic data and config written under {root}/")
    return 0


# -- entry point -----------------------------------------------------------

def selected_buildings(args, cfg: RunConfig) -> list[str]:
    if getattr(args, "building", None) and not getattr(args, "all", False):
        cfg.building(args.building)
        return [args.building]
    return list(cfg.buildings)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridcast", description="ConvLSTM grid-frequency forecasting pipeline")
    parser.add_argument("--version", action="version", version=f"gridcast {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration (INI)")
    common.add_argument("--building", help="building id (default: all configured)")
    common.add_argument("--all", action="store_true", help="every configured building")
    common.add_argument("--seed", type=int, help="override the global seed")
    common.add_argument("--out", help="output directory (overrides config output_dir)")
    common.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="parse, resample, fill, scale and window raw CSVs")
    p = sub.add_parser("train", parents=[common], help="train building models")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes for --all")
    p = sub.add_parser("evaluate", parents=[common], help="score a trained building model")
    p.add_argument("--split", default="test", help="train | test | file=PATH")
    p = sub.add_parser("ensemble", parents=[common], help="weighted ensemble over building models")
    p.add_argument("--split", default="test", help="train | test | file=PATH")
    p.add_argument("--weights", help="override weights, e.g. A=1,B=0,C=0")
    p = sub.add_parser("export-curves", parents=[common], help="collect loss curves into one CSV + figures")
    p.add_argument("--dest", help="destination directory (default: output directory)")

    p = sub.add_parser("synth", help="write synthetic three-building raw data and a config")
    p.add_argument("--out", help="destination directory (default gridcast_demo)")
    p.add_argument("--minutes", type=int, default=2880)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ensemble": cmd_ensemble,
    "export-curves": cmd_export_curves,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "synth":
        return cmd_synth(args)
    try:
        cfg = load_config(args.config, args.seed)
        out = Path(args.out) if args.out else cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out)
    except (GridcastError, OSError) as e:
        log.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
