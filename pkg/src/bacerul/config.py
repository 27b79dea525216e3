"""Flat ``key = value`` run configuration with profile defaults."""

from __future__ import annotations

import difflib
from pathlib import Path
from typing import Any, Callable, Mapping

from .data import SynthConfig
from .errors import ConfigError
from .losses import LossWeights
from .model import ABLATIONS, NetworkShapes
from .trainer import TrainConfig


def _widths(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if not parts:
        raise ValueError("need at least one width")
    out = tuple(int(p) for p in parts)
    if any(w < 1 for w in out):
        raise ValueError("widths must be positive")
    return out


def _opt_float(text: str) -> float | None:
    return None if str(text).strip() in ("", "none") else float(text)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        text = str(text).strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _patience(text: str) -> float:
    text = str(text).strip().lower()
    if text in ("inf", "none"):
        return float("inf")
    value = float(text)
    if value != int(value) or value < 1:
        raise ValueError("patience must be a positive whole number or inf")
    return value


def _path(text: str) -> str:
    return str(text).strip()


# key -> (parser, default, help)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any, str]] = {
    "profile": (_choice("cmapss", "nasa", "toyota"), "cmapss", "hyper-parameter profile (network sizes, cap)"),
    "dataset": (_path, "", "training or evaluation dataset path"),
    "test_dataset": (_path, "", "optional test dataset evaluated after training"),
    "rul_file": (_path, "", "true-RUL file for a C-MAPSS test set"),
    "test_rul_file": (_path, "", "true-RUL file for test_dataset"),
    "format": (_choice("auto", "cmapss", "csv"), "auto", "dataset format; auto picks csv by extension"),
    "checkpoint": (_path, "", "checkpoint path (default <out>/model.ckpt)"),
    "out": (_path, "out", "output directory"),
    "input": (_path, "", "feature rows for predict"),
    "rul_cap": (int, None, "RUL early constant value in cycles"),
    "seed": (int, 0, "random seed"),
    "learning_rate": (float, 1e-3, "Adam learning rate for every network"),
    "lr_e1": (_opt_float, None, "learning-rate override for E1"),
    "lr_g1": (_opt_float, None, "learning-rate override for G1"),
    "lr_d1": (_opt_float, None, "learning-rate override for D1"),
    "lr_e2": (_opt_float, None, "learning-rate override for E2"),
    "lr_g2": (_opt_float, None, "learning-rate override for G2"),
    "lr_d2": (_opt_float, None, "learning-rate override for D2"),
    "batch_size": (int, 250, "mini-batch size"),
    "k_ge_updates": (int, 10, "generator/encoder updates per iteration"),
    "d_updates": (int, 1, "discriminator updates per iteration"),
    "max_iterations": (int, 5000, "hard iteration cap"),
    "patience": (_patience, 20.0, "evaluations without improvement before stopping"),
    "eval_every": (int, 10, "iterations between stopping checks"),
    "ma_window": (int, 10, "moving-average window of the stopping signal"),
    "lambda11": (float, 1.0, "weight of L_D1"),
    "lambda12": (float, 1.0, "weight of L_E1G1"),
    "lambda21": (float, 1.0, "weight of L_D2"),
    "lambda22": (float, 1.0, "weight of L_E2G2"),
    "n_cond": (int, None, "conditional space dimension"),
    "d_z": (int, 10, "latent dimension"),
    "dropout": (float, 0.2, "dropout rate of hidden layers"),
    "dropout_d": (_opt_float, None, "dropout override for D1/D2"),
    "dropout_eg1": (_opt_float, None, "dropout override for E1/G1"),
    "dropout_eg2": (_opt_float, None, "dropout override for E2/G2"),
    "hidden_d": (_widths, None, "D1/D2 hidden widths, comma separated"),
    "hidden_eg1": (_widths, None, "E1/G1 hidden widths"),
    "hidden_eg2": (_widths, None, "E2/G2 hidden widths"),
    "ablation": (_choice(*ABLATIONS), "none", "none | no-cond | no-e2"),
    "samples": (int, 100, "noise draws averaged per prediction"),
    "synth_units": (int, 10, "synthetic fleet size"),
    "synth_min_life": (int, 150, "shortest synthetic lifetime"),
    "synth_max_life": (int, 250, "longest synthetic lifetime"),
    "synth_m": (int, 8, "synthetic feature count"),
    "synth_noise": (float, 0.05, "synthetic sensor noise std"),
}

PROFILES: dict[str, dict[str, Any]] = {
    "cmapss": {"rul_cap": 125, "n_cond": 32, "hidden_d": (25, 25),
               "hidden_eg1": (128, 256, 128), "hidden_eg2": (50, 50, 50)},
    "nasa": {"rul_cap": 125, "n_cond": 32, "hidden_d": (25, 25),
             "hidden_eg1": (64, 64, 64), "hidden_eg2": (32, 64, 32)},
    "toyota": {"rul_cap": 550, "n_cond": 10, "hidden_d": (16, 16),
               "hidden_eg1": (32, 32, 32), "hidden_eg2": (32, 32, 32)},
}


def _unknown(key: str, where: str) -> ConfigError:
    near = difflib.get_close_matches(key, SCHEMA, n=1)
    hint = f"; did you mean {near[0]!r}?" if near else ""
    return ConfigError(f"{where}: unknown config key {key!r}{hint}")


def parse_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = _convert(key, value, f"{source}:{lineno}")
    return values


def _convert(key: str, value, where: str):
    if key not in SCHEMA:
        raise _unknown(key, where)
    parser = SCHEMA[key][0]
    try:
        return parser(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: bad value {value!r} for {key!r}: {exc}") from None


def load_file(path) -> dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_text(text, str(path))


def resolve(file_values: Mapping[str, Any] | None = None,
            overrides: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Merge defaults < profile < file < overrides into one effective mapping."""
    file_values = dict(file_values or {})
    converted = {k: _convert(k, v, "override") if isinstance(v, str) else v
                 for k, v in (overrides or {}).items() if v is not None}
    for k in converted:
        if k not in SCHEMA:
            raise _unknown(k, "override")
    eff = {k: spec[1] for k, spec in SCHEMA.items()}
    profile = converted.get("profile", file_values.get("profile", eff["profile"]))
    eff.update(PROFILES[profile])
    eff.update(file_values)
    eff.update(converted)
    eff["profile"] = profile
    return eff


def render(cfg: Mapping[str, Any]) -> str:
    lines = []
    for key in SCHEMA:
        v = cfg.get(key)
        if v is None:
            text = "none"
        elif isinstance(v, tuple):
            text = ",".join(str(w) for w in v)
        elif isinstance(v, float) and v == float("inf"):
            text = "inf"
        elif isinstance(v, float):
            text = repr(v)
        else:
            text = str(v)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def train_config(cfg: Mapping[str, Any]) -> TrainConfig:
    groups = tuple((name, cfg[f"lr_{name}"]) for name in ("e1", "g1", "d1", "e2", "g2", "d2")
                   if cfg.get(f"lr_{name}") is not None)
    tc = TrainConfig(
        weights=LossWeights(cfg["lambda11"], cfg["lambda12"], cfg["lambda21"], cfg["lambda22"]),
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        k_ge_updates=cfg["k_ge_updates"],
        d_updates=cfg["d_updates"],
        max_iterations=cfg["max_iterations"],
        patience=cfg["patience"],
        eval_every=cfg["eval_every"],
        ma_window=cfg["ma_window"],
        n_cond=cfg["n_cond"],
        d_z=cfg["d_z"],
        rul_cap=cfg["rul_cap"],
        shapes=NetworkShapes(cfg["hidden_d"], cfg["hidden_eg1"], cfg["hidden_eg2"], cfg["dropout"],
                             cfg["dropout_d"], cfg["dropout_eg1"], cfg["dropout_eg2"]),
        seed=cfg["seed"],
        ablation=cfg["ablation"],
        group_learning_rates=groups,
    )
    tc.validate()
    return tc


def synth_config(cfg: Mapping[str, Any]) -> SynthConfig:
    sc = SynthConfig(n_units=cfg["synth_units"], min_life=cfg["synth_min_life"],
                     max_life=cfg["synth_max_life"], m=cfg["synth_m"],
                     noise_std=cfg["synth_noise"], seed=cfg["seed"], rul_cap=cfg["rul_cap"])
    sc.validate()
    return sc
