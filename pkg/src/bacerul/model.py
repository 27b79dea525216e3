"""The six-network model: condition encoding (E1, G1, D1) and RUL prediction (E2, G2, D2)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .data import Normalizer
from .errors import CheckpointError, ConfigError, NumericError, ShapeError
from .nn import LayerSpec, MlpParams, MlpSpec, Rng

PROB_FLOOR = 1e-7
NOISE_LOW, NOISE_HIGH = -1.0, 1.0

ABLATIONS = ("none", "no-cond", "no-e2")
NETWORKS = ("e1", "g1", "d1", "e2", "g2", "d2")
CHECKPOINT_HEADER = "BACE-RUL v1"


@dataclass(frozen=True)
class Dimensions:
    m: int
    n: int
    d_z: int = 10
    rul_cap: int = 125

    def validate(self, ablation: str = "none") -> None:
        if min(self.m, self.n, self.d_z) < 1:
            raise ConfigError(f"dimensions must be >= 1: {self}")
        if self.rul_cap < 1:
            raise ConfigError(f"rul_cap must be >= 1, got {self.rul_cap}")
        if ablation == "no-cond":
            if self.n != self.m:
                raise ConfigError("without a conditional space n must equal m")
        elif self.n <= self.m:
            raise ConfigError(f"conditional space must be wider than the measurements (n={self.n}, m={self.m})")


@dataclass(frozen=True)
class NetworkShapes:
    """Hidden-layer widths and dropout for the three network families."""

    hidden_d: tuple[int, ...] = (25, 25)
    hidden_eg1: tuple[int, ...] = (128, 256, 128)
    hidden_eg2: tuple[int, ...] = (50, 50, 50)
    dropout: float = 0.2
    # per-family overrides of ``dropout``
    dropout_d: float | None = None
    dropout_eg1: float | None = None
    dropout_eg2: float | None = None

    def _rate(self, override: float | None) -> float:
        return self.dropout if override is None else override

    def specs(self, dims: Dimensions, ablation: str = "none") -> dict[str, MlpSpec]:
        m, n, dz = dims.m, dims.n, dims.d_z
        pd, p1, p2 = (self._rate(self.dropout_d), self._rate(self.dropout_eg1),
                      self._rate(self.dropout_eg2))
        out: dict[str, MlpSpec] = {}
        if ablation != "no-cond":
            out["e1"] = MlpSpec.build(m, self.hidden_eg1, n, "linear", p1)
            out["g1"] = MlpSpec.build(n, self.hidden_eg1, m, "linear", p1)
            out["d1"] = MlpSpec.build(m + n, self.hidden_d, 1, "sigmoid", pd)
        if ablation != "no-e2":
            out["e2"] = MlpSpec.build(1 + n, self.hidden_eg2, dz, "linear", p2)
            out["d2"] = MlpSpec.build(1 + dz + n, self.hidden_d, 1, "sigmoid", pd)
        else:
            out["d2"] = MlpSpec.build(1 + n, self.hidden_d, 1, "sigmoid", pd)
        out["g2"] = MlpSpec.build(dz + n, self.hidden_eg2, 1, "linear", p2)
        return out


@dataclass
class RulPrediction:
    mean: float
    std: float
    samples: np.ndarray


@dataclass
class BaceRulModel:
    dims: Dimensions
    normalizer: Normalizer
    g2: MlpParams
    d2: MlpParams
    e1: MlpParams | None = None
    g1: MlpParams | None = None
    d1: MlpParams | None = None
    e2: MlpParams | None = None
    ablation: str = "none"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        self.dims.validate(self.ablation)
        m, n, dz = self.dims.m, self.dims.n, self.dims.d_z
        want = {"g2": (dz + n, 1), "d2": (1 + dz + n, 1)}
        if self.ablation != "no-cond":
            want.update(e1=(m, n), g1=(n, m), d1=(m + n, 1))
        if self.ablation != "no-e2":
            want["e2"] = (1 + n, dz)
        else:
            want["d2"] = (1 + n, 1)
        for name in NETWORKS:
            net = getattr(self, name)
            if name not in want:
                if net is not None:
                    raise ConfigError(f"network {name} is not used under ablation {self.ablation!r}")
                continue
            if net is None:
                raise ConfigError(f"network {name} is missing")
            got = (net.spec.in_dim, net.spec.out_dim)
            if got != want[name]:
                raise ShapeError(f"{name} maps {got[0]}->{got[1]}, expected {want[name][0]}->{want[name][1]}")
        for name in ("d1", "d2"):
            net = getattr(self, name)
            if net is not None and net.spec.layers[-1].activation != "sigmoid":
                raise ConfigError(f"{name} must end in a sigmoid layer")
        if self.normalizer.mean.shape != (m,):
            raise ShapeError(f"normalizer has {self.normalizer.mean.shape[0]} features, expected {m}")

    @property
    def rul_scale(self) -> float:
        return 1.0 / self.dims.rul_cap

    @property
    def has_conditional_space(self) -> bool:
        return self.ablation != "no-cond"

    def networks(self) -> dict[str, MlpParams]:
        return {k: getattr(self, k) for k in NETWORKS if getattr(self, k) is not None}

    def copy(self) -> "BaceRulModel":
        nets = {k: v.copy() for k, v in self.networks().items()}
        norm = Normalizer(self.normalizer.mean.copy(), self.normalizer.std.copy())
        return BaceRulModel(self.dims, norm, ablation=self.ablation, **nets)

    def equals(self, other: "BaceRulModel") -> bool:
        mine, theirs = self.networks(), other.networks()
        return (self.dims == other.dims and self.ablation == other.ablation
                and mine.keys() == theirs.keys()
                and all(mine[k].equals(theirs[k]) for k in mine)
                and np.array_equal(self.normalizer.mean, other.normalizer.mean)
                and np.array_equal(self.normalizer.std, other.normalizer.std))


def build_model(dims: Dimensions, normalizer: Normalizer, rng: Rng,
                shapes: NetworkShapes | None = None, ablation: str = "none") -> BaceRulModel:
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}; choose from {ABLATIONS}")
    dims.validate(ablation)
    specs = (shapes or NetworkShapes()).specs(dims, ablation)
    nets = {name: nn.init_mlp(specs[name], rng) for name in NETWORKS if name in specs}
    return BaceRulModel(dims, normalizer, ablation=ablation, **nets)


def _eval(net: MlpParams, x) -> np.ndarray:
    return nn.forward(net, x, "eval")[0]


def _check_width(v: np.ndarray, width: int, what: str) -> None:
    if v.shape[-1] != width:
        raise ShapeError(f"{what} must have length {width}, got {v.shape[-1]}")


def _cat(*parts) -> np.ndarray:
    """Concatenate feature blocks; all 1-D (one sample) or all 2-D (a batch)."""
    arrs = [np.asarray(p, dtype=float) for p in parts]
    ndims = {a.ndim for a in arrs}
    if len(ndims) != 1 or ndims.pop() not in (1, 2):
        raise ShapeError("mixing single samples and batches")
    return np.concatenate(arrs, axis=-1)


def _t_block(t, like: np.ndarray) -> np.ndarray:
    """Shape a scalar or per-row label to concatenate with ``like``."""
    t = np.asarray(t, dtype=float)
    return t.reshape(-1, 1) if like.ndim == 2 else t.reshape(1)


def encode_condition(model: BaceRulModel, x) -> np.ndarray:
    """Map normalized measurements to the conditional space."""
    x = np.asarray(x, dtype=float)
    _check_width(x, model.dims.m, "x")
    if not model.has_conditional_space:
        return x.copy()
    return _eval(model.e1, x)


def reconstruct_measurements(model: BaceRulModel, c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    _check_width(c, model.dims.n, "c")
    if not model.has_conditional_space:
        return c.copy()
    return _eval(model.g1, c)


def generate_rul(model: BaceRulModel, z, c):
    """Generated RUL in scaled label units (a float for single inputs)."""
    z = np.asarray(z, dtype=float)
    c = np.asarray(c, dtype=float)
    _check_width(z, model.dims.d_z, "z")
    _check_width(c, model.dims.n, "c")
    out = _eval(model.g2, _cat(z, c))
    return float(out[0]) if out.ndim == 1 else out[:, 0]


def encode_rul(model: BaceRulModel, t, c) -> np.ndarray:
    if model.e2 is None:
        raise ConfigError("this model was trained without the RUL encoder")
    c = np.asarray(c, dtype=float)
    _check_width(c, model.dims.n, "c")
    return _eval(model.e2, _cat(_t_block(t, c), c))


def _prob(out: np.ndarray):
    p = np.clip(out[..., 0], PROB_FLOOR, 1.0 - PROB_FLOOR)
    return float(p) if p.ndim == 0 else p


def discriminate_ce(model: BaceRulModel, x, c):
    if model.d1 is None:
        raise ConfigError("this model has no condition-encoding discriminator")
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    _check_width(x, model.dims.m, "x")
    _check_width(c, model.dims.n, "c")
    return _prob(_eval(model.d1, _cat(x, c)))


def discriminate_rp(model: BaceRulModel, t, z, c):
    """Score a (t, z, c) triple; under the no-e2 ablation ``z`` is ignored."""
    c = np.asarray(c, dtype=float)
    _check_width(c, model.dims.n, "c")
    if model.ablation == "no-e2":
        return _prob(_eval(model.d2, _cat(_t_block(t, c), c)))
    z = np.asarray(z, dtype=float)
    _check_width(z, model.dims.d_z, "z")
    return _prob(_eval(model.d2, _cat(_t_block(t, c), z, c)))


def predict_batch(model: BaceRulModel, x_raw, rng: Rng, n_samples: int = 100) -> np.ndarray:
    """Cycle-valued samples of shape ``(rows, n_samples)``, floored at 0."""
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    x_raw = np.atleast_2d(np.asarray(x_raw, dtype=float))
    if not np.all(np.isfinite(x_raw)):
        raise NumericError("prediction input contains NaN or Inf")
    _check_width(x_raw, model.dims.m, "x_raw")
    c = encode_condition(model, model.normalizer.apply(x_raw))
    rows = c.shape[0]
    z = nn.sample_uniform(rng, (rows, n_samples, model.dims.d_z), NOISE_LOW, NOISE_HIGH)
    cc = np.broadcast_to(c[:, None, :], (rows, n_samples, c.shape[1]))
    flat = np.concatenate([z, cc], axis=2).reshape(rows * n_samples, -1)
    t = _eval(model.g2, flat)[:, 0].reshape(rows, n_samples)
    return np.maximum(t / model.rul_scale, 0.0)


def predict(model: BaceRulModel, x_raw, rng: Rng, n_samples: int = 100) -> RulPrediction:
    """RUL estimate in cycles from one cycle's raw measurements."""
    x_raw = np.asarray(x_raw, dtype=float)
    if x_raw.ndim != 1:
        raise ShapeError("predict takes a single measurement vector; use predict_batch for many")
    samples = predict_batch(model, x_raw, rng, n_samples)[0]
    return RulPrediction(float(samples.mean()), float(samples.std()), samples)


# checkpoint text format ---------------------------------------------------

def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


def save_checkpoint(model: BaceRulModel, path) -> None:
    d = model.dims
    lines = [CHECKPOINT_HEADER,
             f"dims {d.m} {d.n} {d.d_z} {d.rul_cap}",
             f"ablation {model.ablation}",
             f"norm_mean {_fmt(model.normalizer.mean)}",
             f"norm_std {_fmt(model.normalizer.std)}"]
    for name in NETWORKS:
        net = getattr(model, name)
        if net is None:
            lines.append(f"net {name} absent")
            continue
        lines.append(f"net {name} {len(net.spec.layers)} {format(net.spec.dropout_rate, '.17g')}")
        for layer, w, b in zip(net.spec.layers, net.weights, net.biases):
            lines.append(f"layer {layer.in_dim} {layer.out_dim} {layer.activation}")
            lines.extend(_fmt(row) for row in w)
            lines.append(_fmt(b))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


class _Lines:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self) -> list[str]:
        if self.pos >= len(self.lines):
            raise CheckpointError("checkpoint is truncated")
        self.pos += 1
        return self.lines[self.pos - 1].split()

    def keyed(self, key: str) -> list[str]:
        toks = self.next()
        if not toks or toks[0] != key:
            raise CheckpointError(f"line {self.pos}: expected {key!r}")
        return toks[1:]

    def floats(self, count: int) -> np.ndarray:
        toks = self.next()
        if len(toks) != count:
            raise CheckpointError(f"line {self.pos}: expected {count} values, found {len(toks)}")
        try:
            return np.array([float(t) for t in toks])
        except ValueError:
            raise CheckpointError(f"line {self.pos}: malformed number") from None


def _ints(toks: Sequence[str], count: int, where: str) -> list[int]:
    if len(toks) != count:
        raise CheckpointError(f"malformed {where} line")
    try:
        return [int(t) for t in toks]
    except ValueError:
        raise CheckpointError(f"malformed {where} line") from None


def load_checkpoint(path) -> BaceRulModel:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Lines(text)
    if r.next() != CHECKPOINT_HEADER.split():
        raise CheckpointError(f"{path}: not a '{CHECKPOINT_HEADER}' checkpoint")
    m, n, dz, cap = _ints(r.keyed("dims"), 4, "dims")
    ablation_toks = r.keyed("ablation")
    if len(ablation_toks) != 1:
        raise CheckpointError("malformed ablation line")
    ablation = ablation_toks[0]
    try:
        mean = np.array(r.keyed("norm_mean"), dtype=float)
        std = np.array(r.keyed("norm_std"), dtype=float)
    except ValueError:
        raise CheckpointError("malformed normalizer line") from None
    nets = {}
    for name in NETWORKS:
        toks = r.keyed("net")
        if not toks or toks[0] != name:
            raise CheckpointError(f"expected network {name}")
        if toks[1:] == ["absent"]:
            continue
        if len(toks) != 3:
            raise CheckpointError(f"malformed header for network {name}")
        n_layers = _ints(toks[1:2], 1, "net")[0]
        try:
            dropout = float(toks[2])
        except ValueError:
            raise CheckpointError(f"malformed dropout for network {name}") from None
        layers, weights, biases = [], [], []
        for _ in range(n_layers):
            lt = r.keyed("layer")
            if len(lt) != 3:
                raise CheckpointError(f"malformed layer line in network {name}")
            i, o = _ints(lt[:2], 2, "layer")
            try:
                layers.append(LayerSpec(i, o, lt[2]))
            except ConfigError as exc:
                raise CheckpointError(str(exc)) from exc
            weights.append(np.stack([r.floats(i) for _ in range(o)]))
            biases.append(r.floats(o))
        try:
            nets[name] = MlpParams(MlpSpec(tuple(layers), dropout), weights, biases)
        except (ConfigError, ShapeError) as exc:
            raise CheckpointError(f"network {name}: {exc}") from exc
    if r.next() != ["end"]:
        raise CheckpointError("missing end marker")
    try:
        return BaceRulModel(Dimensions(m, n, dz, cap), Normalizer(mean, std), ablation=ablation, **nets)
    except (ConfigError, ShapeError, TypeError) as exc:
        raise CheckpointError(f"inconsistent checkpoint: {exc}") from exc
