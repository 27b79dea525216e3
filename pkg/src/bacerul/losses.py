"""Mini-batch losses for both training phases, with their gradients.

Every loss returns ``(value, grads)``. ``grads`` maps a network name to a
gradient list aligned with ``MlpParams.arrays()`` and only contains the
networks that loss is minimized over. Passing ``rng`` runs the networks in
train mode (dropout on); leaving it out gives the deterministic eval-mode
value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import NumericError, UsageError
from .model import PROB_FLOOR, BaceRulModel
from .nn import Rng

Grads = dict[str, list[np.ndarray]]

NORM_SMOOTHING = 1e-12


@dataclass
class CeBatch:
    xs: np.ndarray      # (B, m) normalized measurements
    c_eps: np.ndarray   # (B, n) noise conditions

    def __post_init__(self):
        if len(self.xs) == 0:
            raise UsageError("condition-encoding batch is empty")
        if len(self.xs) != len(self.c_eps):
            raise UsageError("xs and c_eps must have equal lengths")


@dataclass
class RpBatch:
    """RUL-phase batch. Labels are in scaled units.

    ``t_a/c_a`` come from the accelerated stage, ``t_n/c_n`` from the normal
    stage and ``t_all/c_all`` from the whole pool. Each group has its own
    latent noise draws.
    """

    t_a: np.ndarray
    c_a: np.ndarray
    z_a: np.ndarray
    t_n: np.ndarray
    c_n: np.ndarray
    z_n: np.ndarray
    t_all: np.ndarray
    c_all: np.ndarray
    z_all: np.ndarray

    def __post_init__(self):
        if len(self.t_a) == 0:
            raise UsageError("RUL batch has no accelerated-stage samples")
        if len(self.t_all) == 0:
            raise UsageError("RUL batch has an empty sampling pool")
        for t, c, z, what in ((self.t_a, self.c_a, self.z_a, "accelerated"),
                              (self.t_n, self.c_n, self.z_n, "normal"),
                              (self.t_all, self.c_all, self.z_all, "pooled")):
            if not len(t) == len(c) == len(z):
                raise UsageError(f"{what} group has mismatched lengths")


@dataclass(frozen=True)
class LossWeights:
    lambda11: float = 1.0
    lambda12: float = 1.0
    lambda21: float = 1.0
    lambda22: float = 1.0

    def __post_init__(self):
        for k, v in vars(self).items():
            if not np.isfinite(v) or v < 0:
                raise UsageError(f"{k} must be a finite non-negative number, got {v}")


def _run(net, x, rng: Rng | None):
    return nn.forward(net, x, "train" if rng is not None else "eval", rng)


def _col(t: np.ndarray) -> np.ndarray:
    return np.asarray(t, dtype=float).reshape(-1, 1)


def _neg_log(p: np.ndarray, real: bool, count: int):
    """Summed ``-log p`` (real) or ``-log(1 - p)`` (fake) over ``count`` samples
    and its gradient w.r.t. the raw sigmoid output. Clamped entries get no gradient."""
    pc = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    live = (p > PROB_FLOOR) & (p < 1.0 - PROB_FLOOR)
    if real:
        value = -np.log(pc)
        grad = -1.0 / pc
    else:
        value = -np.log1p(-pc)
        grad = 1.0 / (1.0 - pc)
    return value.sum() / count, grad * live / count


def _finite(value: float, name: str) -> float:
    if not np.isfinite(value):
        raise NumericError(f"{name} is not finite ({value})")
    return float(value)


def _add(acc: list[np.ndarray] | None, g: list[np.ndarray]) -> list[np.ndarray]:
    return g if acc is None else [a + b for a, b in zip(acc, g)]


# condition encoding -------------------------------------------------------

def loss_d1(model: BaceRulModel, batch: CeBatch, rng: Rng | None = None) -> tuple[float, Grads]:
    """Discriminator loss on (x, E1(x)) vs (G1(c_eps), c_eps); grads for d1."""
    b = len(batch.xs)
    c_real, _ = _run(model.e1, batch.xs, rng)
    x_fake, _ = _run(model.g1, batch.c_eps, rng)
    p_r, cache_r = _run(model.d1, np.hstack([batch.xs, c_real]), rng)
    p_f, cache_f = _run(model.d1, np.hstack([x_fake, batch.c_eps]), rng)
    v_r, g_r = _neg_log(p_r, True, b)
    v_f, g_f = _neg_log(p_f, False, b)
    grads = [a + c for a, c in zip(nn.backward(model.d1, cache_r, g_r)[0],
                                   nn.backward(model.d1, cache_f, g_f)[0])]
    return _finite(v_r + v_f, "L_D1"), {"d1": grads}


def loss_e1g1(model: BaceRulModel, batch: CeBatch, rng: Rng | None = None) -> tuple[float, Grads]:
    """Flipped-label adversarial loss; grads for e1 and g1 through a frozen d1."""
    b, m = batch.xs.shape
    c_real, cache_e = _run(model.e1, batch.xs, rng)
    x_fake, cache_g = _run(model.g1, batch.c_eps, rng)
    p_f, cache_f = _run(model.d1, np.hstack([x_fake, batch.c_eps]), rng)
    p_r, cache_r = _run(model.d1, np.hstack([batch.xs, c_real]), rng)
    v_f, g_f = _neg_log(p_f, True, b)
    v_r, g_r = _neg_log(p_r, False, b)
    _, gin_f = nn.backward(model.d1, cache_f, g_f)
    _, gin_r = nn.backward(model.d1, cache_r, g_r)
    grads_g1, _ = nn.backward(model.g1, cache_g, gin_f[:, :m])
    grads_e1, _ = nn.backward(model.e1, cache_e, gin_r[:, m:])
    return _finite(v_f + v_r, "L_E1G1"), {"e1": grads_e1, "g1": grads_g1}


def loss_recon1(model: BaceRulModel, xs: np.ndarray, rng: Rng | None = None) -> tuple[float, Grads]:
    """Mean Euclidean reconstruction error of G1(E1(x)); grads for e1 and g1."""
    xs = np.asarray(xs, dtype=float)
    if len(xs) == 0:
        raise UsageError("reconstruction batch is empty")
    b = len(xs)
    c, cache_e = _run(model.e1, xs, rng)
    xr, cache_g = _run(model.g1, c, rng)
    delta = xr - xs
    norm = np.sqrt(np.sum(delta ** 2, axis=1, keepdims=True) + NORM_SMOOTHING)
    grads_g1, gc = nn.backward(model.g1, cache_g, delta / norm / b)
    grads_e1, _ = nn.backward(model.e1, cache_e, gc)
    return _finite(norm.mean(), "L_recon1"), {"e1": grads_e1, "g1": grads_g1}


# RUL prediction -----------------------------------------------------------

def _real_triples(model: BaceRulModel, batch: RpBatch, rng: Rng | None):
    """Discriminator input for the accelerated samples plus the E2 cache."""
    t = _col(batch.t_a)
    if model.e2 is None:
        return np.hstack([t, batch.c_a]), None
    z, cache_e = _run(model.e2, np.hstack([t, batch.c_a]), rng)
    return np.hstack([t, z, batch.c_a]), cache_e


def _fake_triples(model: BaceRulModel, batch: RpBatch, rng: Rng | None):
    t_gen, cache_g = _run(model.g2, np.hstack([batch.z_all, batch.c_all]), rng)
    if model.e2 is None:
        return np.hstack([t_gen, batch.c_all]), cache_g
    return np.hstack([t_gen, batch.z_all, batch.c_all]), cache_g


def loss_d2(model: BaceRulModel, batch: RpBatch, rng: Rng | None = None) -> tuple[float, Grads]:
    """Real accelerated triples vs generated triples over the pool; grads for d2."""
    inp_r, _ = _real_triples(model, batch, rng)
    inp_f, _ = _fake_triples(model, batch, rng)
    p_r, cache_r = _run(model.d2, inp_r, rng)
    p_f, cache_f = _run(model.d2, inp_f, rng)
    v_r, g_r = _neg_log(p_r, True, len(inp_r))
    v_f, g_f = _neg_log(p_f, False, len(inp_f))
    grads = [a + c for a, c in zip(nn.backward(model.d2, cache_r, g_r)[0],
                                   nn.backward(model.d2, cache_f, g_f)[0])]
    return _finite(v_r + v_f, "L_D2"), {"d2": grads}


def loss_e2g2(model: BaceRulModel, batch: RpBatch, rng: Rng | None = None) -> tuple[float, Grads]:
    """Flipped-label adversarial loss; grads for g2 (and e2 when present).

    Without an encoder the real-sample term carries no trainable parameters
    and is left out of the value.
    """
    inp_f, cache_g = _fake_triples(model, batch, rng)
    p_f, cache_f = _run(model.d2, inp_f, rng)
    value, g_f = _neg_log(p_f, True, len(inp_f))
    _, gin_f = nn.backward(model.d2, cache_f, g_f)
    grads: Grads = {"g2": nn.backward(model.g2, cache_g, gin_f[:, :1])[0]}
    if model.e2 is not None:
        inp_r, cache_e = _real_triples(model, batch, rng)
        p_r, cache_r = _run(model.d2, inp_r, rng)
        v_r, g_r = _neg_log(p_r, False, len(inp_r))
        _, gin_r = nn.backward(model.d2, cache_r, g_r)
        dz = model.dims.d_z
        grads["e2"] = nn.backward(model.e2, cache_e, gin_r[:, 1:1 + dz])[0]
        value += v_r
    return _finite(value, "L_E2G2"), grads


def dist_terms(model: BaceRulModel, batch: RpBatch, rng: Rng | None = None):
    """The two distortion terms separately: ``(accel_abs_error, normal_hinge, grads)``."""
    ba = len(batch.t_a)
    pred_a, cache_a = _run(model.g2, np.hstack([batch.z_a, batch.c_a]), rng)
    delta = pred_a - _col(batch.t_a)
    term1 = np.abs(delta).mean()
    grads, _ = nn.backward(model.g2, cache_a, np.sign(delta) / ba)
    term2 = 0.0
    bn = len(batch.t_n)
    if bn:
        pred_n, cache_n = _run(model.g2, np.hstack([batch.z_n, batch.c_n]), rng)
        shortfall = np.maximum(0.0, _col(batch.t_n) - pred_n)
        term2 = np.mean(shortfall ** 2)
        grads = _add(grads, nn.backward(model.g2, cache_n, -2.0 * shortfall / bn)[0])
    return float(term1), float(term2), grads


def loss_dist(model: BaceRulModel, batch: RpBatch, rng: Rng | None = None) -> tuple[float, Grads]:
    """Absolute error on accelerated samples plus squared shortfall on normal ones; grads for g2."""
    term1, term2, grads = dist_terms(model, batch, rng)
    return _finite(term1 + term2, "L_dist"), {"g2": grads}


def loss_recon2(model: BaceRulModel, t, c, rng: Rng | None = None) -> tuple[float, Grads]:
    """Mean |G2(E2(t, c), c) - t| over pooled pairs; grads for e2 and g2."""
    if model.e2 is None:
        raise UsageError("L_recon2 needs the RUL encoder")
    t = _col(t)
    c = np.asarray(c, dtype=float)
    if len(t) == 0:
        raise UsageError("reconstruction batch is empty")
    b = len(t)
    z, cache_e = _run(model.e2, np.hstack([t, c]), rng)
    tr, cache_g = _run(model.g2, np.hstack([z, c]), rng)
    delta = tr - t
    grads_g2, gin = nn.backward(model.g2, cache_g, np.sign(delta) / b)
    grads_e2, _ = nn.backward(model.e2, cache_e, gin[:, :model.dims.d_z])
    return _finite(np.abs(delta).mean(), "L_recon2"), {"e2": grads_e2, "g2": grads_g2}


def composite_ce(weights: LossWeights, ld1: float, le1g1: float, lrecon1: float) -> float:
    return _finite(weights.lambda11 * ld1 + weights.lambda12 * le1g1 + lrecon1, "L_CE")


def composite_rp(weights: LossWeights, ld2: float, le2g2: float, lrecon2: float, ldist: float) -> float:
    return _finite(weights.lambda21 * ld2 + weights.lambda22 * le2g2 + lrecon2 + ldist, "L_RP")
