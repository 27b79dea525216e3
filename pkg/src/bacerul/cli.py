"""Command-line entry point: ``bacerul {train,evaluate,predict,synth}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import config as cfgmod
from .data import (LabeledSet, compute_rul_labels, load_cmapss, load_csv, load_rul_file,
                   synth_degradation, write_csv)
from .errors import BaceRulError, ConfigError, ShapeError
from .metrics import evaluate
from .model import load_checkpoint, predict_batch, save_checkpoint
from .trainer import train

log = logging.getLogger("bacerul")


def _require(cfg: dict[str, Any], key: str) -> str:
    if not cfg.get(key):
        raise ConfigError(f"missing required setting {key!r} (config key or --{key.replace('_', '-')})")
    return cfg[key]


def _load_labeled(path: str, fmt: str, rul_cap: int, rul_file: str = "") -> LabeledSet:
    if fmt == "auto":
        fmt = "csv" if path.lower().endswith(".csv") else "cmapss"
    if not Path(path).is_file():
        raise ConfigError(f"dataset {path!r} does not exist")
    if fmt == "csv":
        records, names = load_csv(path)
    else:
        records, names = load_cmapss(path), ()
    end_rul = load_rul_file(rul_file, records) if rul_file else None
    return compute_rul_labels(records, rul_cap, end_rul, names)


def _effective(args: argparse.Namespace) -> dict[str, Any]:
    file_values = cfgmod.load_file(args.config) if args.config else {}
    overrides = {
        "seed": args.seed, "dataset": args.dataset, "rul_file": args.rul_file,
        "checkpoint": args.checkpoint, "out": args.out, "rul_cap": args.rul_cap,
        "ablation": args.ablation, "samples": args.samples,
    }
    for key in ("input", "synth_units", "synth_min_life", "synth_max_life", "synth_m", "synth_noise"):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        overrides[k] = v
    return cfgmod.resolve(file_values, overrides)


def _out_dir(cfg: dict[str, Any]) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_path(cfg: dict[str, Any]) -> Path:
    return Path(cfg["checkpoint"]) if cfg["checkpoint"] else Path(cfg["out"]) / "model.ckpt"


def cmd_train(cfg: dict[str, Any]) -> int:
    tcfg = cfgmod.train_config(cfg)
    data = _load_labeled(_require(cfg, "dataset"), cfg["format"], cfg["rul_cap"], cfg["rul_file"])
    out = _out_dir(cfg)
    model, report = train(data, tcfg)
    ckpt = _checkpoint_path(cfg)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, ckpt)
    report.write_csv(out / "train_report.csv")
    (out / "train_manifest.txt").write_text(cfgmod.render(cfg))
    last = report.records[-1]
    ce = "n/a" if last.composite_ce is None else f"{last.composite_ce:.6f}"
    print(f"iterations={len(report.records)} stop={report.stop_reason} "
          f"L_CE={ce} L_RP={last.composite_rp:.6f}")
    print(f"checkpoint written to {ckpt}")
    if cfg["test_dataset"]:
        test = _load_labeled(cfg["test_dataset"], cfg["format"], cfg["rul_cap"], cfg["test_rul_file"])
        _report_eval(model, test, cfg, out / "eval.csv")
    return 0


def _report_eval(model, data: LabeledSet, cfg: dict[str, Any], path: Path) -> None:
    if data.m != model.dims.m:
        raise ShapeError(f"dataset has {data.m} features but the checkpoint expects {model.dims.m}")
    res = evaluate(model, data, np.random.default_rng(cfg["seed"]), cfg["samples"])
    res.write_csv(path)
    print(f"n={res.n} RMSE={res.rmse:.6f} Score={res.score:.6f} MAPE={res.mape:.6f}%")
    print(f"evaluation written to {path}")


def cmd_evaluate(cfg: dict[str, Any]) -> int:
    model = load_checkpoint(_checkpoint_path(cfg))
    data = _load_labeled(_require(cfg, "dataset"), cfg["format"], model.dims.rul_cap, cfg["rul_file"])
    out = _out_dir(cfg)
    _report_eval(model, data, cfg, out / "eval.csv")
    return 0


def _read_rows(path: str) -> np.ndarray:
    """Feature rows from a CSV; a leading ``unit,cycle`` pair of columns is dropped."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ConfigError(f"{path}: no rows")
    start = 0
    header = [c.strip().lower() for c in rows[0]]
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        start = 1
    skip = 2 if header[:2] == ["unit", "cycle"] else 0
    try:
        return np.array([[float(c) for c in r[skip:]] for r in rows[start:]], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_predict(cfg: dict[str, Any], row: str | None = None) -> int:
    model = load_checkpoint(_checkpoint_path(cfg))
    if row:
        x = np.array([[float(v) for v in row.split(",")]])
    else:
        x = _read_rows(_require(cfg, "input"))
    if x.shape[1] != model.dims.m:
        raise ShapeError(f"rows have {x.shape[1]} features but the checkpoint expects {model.dims.m}")
    lines = ["row,pred_mean,pred_std"]
    for i, xi in enumerate(x):
        # a fresh generator per row: each prediction depends only on (row, seed)
        s = predict_batch(model, xi, np.random.default_rng(cfg["seed"]), cfg["samples"])[0]
        lines.append(f"{i},{s.mean():.17g},{s.std():.17g}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if cfg["out"] and cfg["input"]:
        (_out_dir(cfg) / "predictions.csv").write_text(text)
    return 0


def cmd_synth(cfg: dict[str, Any]) -> int:
    scfg = cfgmod.synth_config(cfg)
    train_set, test_set = synth_degradation(scfg)
    out = _out_dir(cfg)
    write_csv(out / "train.csv", train_set)
    write_csv(out / "test.csv", test_set)
    (out / "manifest.txt").write_text(cfgmod.render(cfg))
    print(f"train: {len(train_set.units)} units, {len(train_set)} cycles -> {out / 'train.csv'}")
    print(f"test: {len(test_set.units)} units, {len(test_set)} cycles -> {out / 'test.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--dataset")
    common.add_argument("--rul-file", dest="rul_file")
    common.add_argument("--checkpoint")
    common.add_argument("--out")
    common.add_argument("--rul-cap", dest="rul_cap", type=int)
    common.add_argument("--ablation", choices=["none", "no-cond", "no-e2"])
    common.add_argument("--samples", type=int)
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="bacerul", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train a model")
    sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a labeled dataset")
    p = sub.add_parser("predict", parents=[common], help="predict RUL for feature rows")
    p.add_argument("--input", help="CSV of feature rows")
    p.add_argument("--row", help="one comma-separated feature row")
    s = sub.add_parser("synth", parents=[common], help="write a synthetic degradation fleet")
    s.add_argument("--units", dest="synth_units", type=int)
    s.add_argument("--min-life", dest="synth_min_life", type=int)
    s.add_argument("--max-life", dest="synth_max_life", type=int)
    s.add_argument("--features", dest="synth_m", type=int)
    s.add_argument("--noise", dest="synth_noise", type=float)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _effective(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "predict":
            return cmd_predict(cfg, args.row)
        return cmd_synth(cfg)
    except BaceRulError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
