"""Loading, RUL labeling, normalization and the synthetic degradation fleet."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError, ShapeError, UsageError

log = logging.getLogger(__name__)

CMAPSS_FIELDS = 26
CMAPSS_SETTINGS = 3

# RUL early constant value per dataset family
RUL_CAP_DEFAULTS = {"cmapss": 125, "nasa": 125, "toyota": 550}


@dataclass(frozen=True)
class CycleRecord:
    unit_id: int
    cycle_index: int
    op_settings: np.ndarray
    sensors: np.ndarray

    @property
    def features(self) -> np.ndarray:
        return np.concatenate([self.op_settings, self.sensors])


@dataclass(frozen=True)
class LabeledSample:
    unit_id: int
    cycle_index: int
    x: np.ndarray
    t_raw: int
    t: int
    normal: bool

    @property
    def stage(self) -> str:
        return "Normal" if self.normal else "Accelerated"


@dataclass
class LabeledSet:
    """Column-oriented labeled dataset ordered by (unit, cycle).

    ``normal[i]`` is True exactly when ``t_raw[i] > rul_cap``.
    """

    unit: np.ndarray
    cycle: np.ndarray
    x: np.ndarray
    t_raw: np.ndarray
    t: np.ndarray
    normal: np.ndarray
    rul_cap: int
    feature_names: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(int(self.unit[i]), int(self.cycle[i]), self.x[i],
                             int(self.t_raw[i]), int(self.t[i]), bool(self.normal[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def m(self) -> int:
        return self.x.shape[1]

    @property
    def units(self) -> np.ndarray:
        return np.unique(self.unit)

    def subset(self, mask_or_index) -> "LabeledSet":
        idx = np.asarray(mask_or_index)
        return LabeledSet(self.unit[idx], self.cycle[idx], self.x[idx], self.t_raw[idx],
                          self.t[idx], self.normal[idx], self.rul_cap, self.feature_names)

    def with_x(self, x: np.ndarray) -> "LabeledSet":
        return LabeledSet(self.unit, self.cycle, x, self.t_raw, self.t, self.normal,
                          self.rul_cap, self.feature_names)


def _parse_number(token: str, path, lineno: int) -> float:
    try:
        v = float(token)
    except ValueError:
        raise ParseError(f"non-numeric field {token!r}", path, lineno) from None
    if not np.isfinite(v):
        raise ParseError(f"non-finite field {token!r}", path, lineno)
    return v


def _as_int(v: float, what: str, path, lineno: int) -> int:
    if v != int(v):
        raise ParseError(f"{what} must be an integer, got {v}", path, lineno)
    return int(v)


def load_cmapss(path) -> list[CycleRecord]:
    """Parse a whitespace-separated C-MAPSS train/test file."""
    path = Path(path)
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != CMAPSS_FIELDS:
                raise ParseError(f"expected {CMAPSS_FIELDS} fields, found {len(tokens)}", path, lineno)
            vals = [_parse_number(tok, path, lineno) for tok in tokens]
            unit = _as_int(vals[0], "unit id", path, lineno)
            cycle = _as_int(vals[1], "cycle", path, lineno)
            if cycle < 1:
                raise ParseError(f"cycle must be positive, got {cycle}", path, lineno)
            records.append(CycleRecord(unit, cycle, np.array(vals[2:2 + CMAPSS_SETTINGS]),
                                       np.array(vals[2 + CMAPSS_SETTINGS:])))
    if not records:
        raise UsageError(f"{path}: file contains no records")
    return records


def load_csv(path) -> tuple[list[CycleRecord], tuple[str, ...]]:
    """Parse a generic ``unit,cycle,<features...>`` CSV file.

    Returns the records and the feature names from the header.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise UsageError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[0].lower() != "unit" or header[1].lower() != "cycle":
            raise ParseError("header must start with 'unit,cycle' followed by feature names", path, 1)
        width = len(header)
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise ParseError(f"expected {width} fields, found {len(row)}", path, lineno)
            vals = [_parse_number(tok.strip(), path, lineno) for tok in row]
            unit = _as_int(vals[0], "unit id", path, lineno)
            cycle = _as_int(vals[1], "cycle", path, lineno)
            if cycle < 1:
                raise ParseError(f"cycle must be positive, got {cycle}", path, lineno)
            records.append(CycleRecord(unit, cycle, np.empty(0), np.array(vals[2:])))
    if not records:
        raise UsageError(f"{path}: file contains no records")
    return records, tuple(header[2:])


def write_csv(path, data: LabeledSet, x: np.ndarray | None = None) -> None:
    """Write records in the generic CSV layout (labels are not stored)."""
    x = data.x if x is None else x
    names = data.feature_names or tuple(f"f{j}" for j in range(x.shape[1]))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit", "cycle", *names])
        for i in range(len(data)):
            w.writerow([int(data.unit[i]), int(data.cycle[i]), *(repr(float(v)) for v in x[i])])


def load_rul_file(path, test_records: Sequence[CycleRecord]) -> dict[int, int]:
    """Read the per-unit true RUL at each test unit's last observed cycle.

    Values of 0 are raised to 1 (labels are at least 1) with a warning.
    Units are matched to lines in order of first appearance.
    """
    path = Path(path)
    values = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            tok = line.strip()
            if not tok:
                continue
            v = _as_int(_parse_number(tok, path, lineno), "RUL", path, lineno)
            if v < 0:
                raise ParseError(f"negative RUL {v}", path, lineno)
            if v == 0:
                log.warning("%s:%d: true RUL 0 raised to 1", path, lineno)
                v = 1
            values.append(v)
    units = list(dict.fromkeys(r.unit_id for r in test_records))
    if len(values) != len(units):
        raise UsageError(f"{path}: {len(values)} RUL values for {len(units)} test units")
    return dict(zip(units, values))


def _group_by_unit(records: Iterable[CycleRecord]) -> dict[int, list[CycleRecord]]:
    groups: dict[int, list[CycleRecord]] = {}
    for r in records:
        groups.setdefault(r.unit_id, []).append(r)
    for unit, rs in groups.items():
        rs.sort(key=lambda r: r.cycle_index)
        cycles = [r.cycle_index for r in rs]
        if cycles != list(range(1, len(rs) + 1)):
            raise DataError(f"unit {unit}: cycles are not consecutive from 1")
    return dict(sorted(groups.items()))


def compute_rul_labels(records: Sequence[CycleRecord], rul_cap: int,
                       end_rul: dict[int, int] | None = None,
                       feature_names: Sequence[str] = ()) -> LabeledSet:
    """Label each cycle with ``C_end - c + 1`` (shifted by the unit's true end RUL
    when ``end_rul`` is given) and clip at ``rul_cap``."""
    if rul_cap < 1:
        raise ConfigError(f"rul_cap must be >= 1, got {rul_cap}")
    if not records:
        raise UsageError("no records to label")
    groups = _group_by_unit(records)
    unit, cycle, xs, t_raw = [], [], [], []
    for u, rs in groups.items():
        c_end = rs[-1].cycle_index
        offset = 1 if end_rul is None else end_rul[u]
        for r in rs:
            unit.append(u)
            cycle.append(r.cycle_index)
            xs.append(r.features)
            t_raw.append(c_end - r.cycle_index + offset)
    t_raw_arr = np.array(t_raw, dtype=np.int64)
    widths = {len(x) for x in xs}
    if len(widths) != 1:
        raise DataError(f"records have inconsistent feature widths {sorted(widths)}")
    return LabeledSet(
        unit=np.array(unit, dtype=np.int64),
        cycle=np.array(cycle, dtype=np.int64),
        x=np.array(xs, dtype=float),
        t_raw=t_raw_arr,
        t=np.minimum(t_raw_arr, rul_cap),
        normal=t_raw_arr > rul_cap,
        rul_cap=int(rul_cap),
        feature_names=tuple(feature_names),
    )


def split_stages(data: LabeledSet) -> tuple[LabeledSet, LabeledSet]:
    """Return ``(normal, accelerated)`` partitions."""
    return data.subset(data.normal), data.subset(~data.normal)


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    STD_FLOOR = 1e-8

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.mean.shape[0]:
            raise ShapeError(f"normalizer fitted on {self.mean.shape[0]} features, got {x.shape[-1]}")
        return (x - self.mean) / self.std

    def invert(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.std + self.mean


def fit_normalizer(x) -> Normalizer:
    """Per-feature z-score statistics; the std is floored so constant columns map to 0."""
    if isinstance(x, LabeledSet):
        x = x.x
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise UsageError("need at least 2 training samples to fit a normalizer")
    return Normalizer(x.mean(axis=0), np.maximum(x.std(axis=0), Normalizer.STD_FLOOR))


def apply_normalizer(norm: Normalizer, data: LabeledSet) -> LabeledSet:
    return data.with_x(norm.apply(data.x))


@dataclass(frozen=True)
class SynthConfig:
    n_units: int = 10
    min_life: int = 150
    max_life: int = 250
    m: int = 8
    noise_std: float = 0.05
    seed: int = 42
    rul_cap: int = 125
    train_fraction: float = 0.8

    def validate(self) -> None:
        if self.n_units < 2:
            raise ConfigError("n_units must be >= 2 so both splits are non-empty")
        if not 1 <= self.min_life <= self.max_life:
            raise ConfigError("need 1 <= min_life <= max_life")
        if self.m < 2:
            raise ConfigError("m must be >= 2")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if self.rul_cap < 1:
            raise ConfigError("rul_cap must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")


def synth_records(cfg: SynthConfig) -> list[CycleRecord]:
    """Sensor histories driven by a clipped linear health index.

    Each feature is ``offset + a*h + b*h**2`` plus Gaussian noise, where
    ``h = min(1, t_raw / rul_cap)`` and the coefficients are fixed per fleet.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    offset = rng.normal(0.0, 1.0, cfg.m)
    lin = rng.uniform(0.5, 2.0, cfg.m) * rng.choice([-1.0, 1.0], cfg.m)
    quad = rng.uniform(-1.0, 1.0, cfg.m)
    records = []
    for unit in range(1, cfg.n_units + 1):
        life = int(rng.integers(cfg.min_life, cfg.max_life + 1))
        c = np.arange(1, life + 1)
        h = np.minimum(1.0, (life - c + 1) / cfg.rul_cap)
        x = offset + np.outer(h, lin) + np.outer(h ** 2, quad)
        if cfg.noise_std > 0:
            x = x + rng.normal(0.0, cfg.noise_std, x.shape)
        records.extend(CycleRecord(unit, int(ci), np.empty(0), xi) for ci, xi in zip(c, x))
    return records


def synth_split_units(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, 1])
    units = rng.permutation(np.arange(1, cfg.n_units + 1))
    n_train = int(round(cfg.train_fraction * cfg.n_units))
    n_train = min(max(n_train, 1), cfg.n_units - 1)
    return np.sort(units[:n_train]), np.sort(units[n_train:])


def synth_degradation(cfg: SynthConfig) -> tuple[LabeledSet, LabeledSet]:
    """Labeled (train, test) fleets split 80/20 at unit level."""
    names = tuple(f"s{j + 1}" for j in range(cfg.m))
    data = compute_rul_labels(synth_records(cfg), cfg.rul_cap, feature_names=names)
    train_units, test_units = synth_split_units(cfg)
    return data.subset(np.isin(data.unit, train_units)), data.subset(np.isin(data.unit, test_units))
