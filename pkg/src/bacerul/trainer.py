"""Two-phase alternating adversarial training with early stopping."""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses as L
from . import nn
from .data import LabeledSet, fit_normalizer
from .errors import ConfigError, NumericError, UsageError
from .model import (ABLATIONS, NOISE_HIGH, NOISE_LOW, BaceRulModel, Dimensions,
                    NetworkShapes, build_model, encode_condition)

log = logging.getLogger(__name__)

REPORT_FIELDS = ("L_D1", "L_E1G1", "L_recon1", "L_D2", "L_E2G2", "L_recon2", "L_dist",
                 "composite_ce", "composite_rp")


@dataclass(frozen=True)
class TrainConfig:
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    learning_rate: float = 1e-3
    batch_size: int = 250
    k_ge_updates: int = 10
    d_updates: int = 1
    max_iterations: int = 5000
    patience: float = 20
    eval_every: int = 10
    ma_window: int = 10
    n_cond: int = 32
    d_z: int = 10
    rul_cap: int = 125
    shapes: NetworkShapes = field(default_factory=NetworkShapes)
    seed: int = 0
    ablation: str = "none"
    # per-network overrides of learning_rate, e.g. {"d1": 5e-4}
    group_learning_rates: tuple[tuple[str, float], ...] = ()

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.k_ge_updates < 2:
            raise ConfigError("k_ge_updates must be >= 2")
        if self.d_updates < 1:
            raise ConfigError("d_updates must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.eval_every < 1 or self.ma_window < 1:
            raise ConfigError("eval_every and ma_window must be >= 1")
        if not self.patience > 0:
            raise ConfigError("patience must be positive")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        for name, lr in self.group_learning_rates:
            if not lr > 0:
                raise ConfigError(f"learning rate for {name} must be positive")

    def dims_for(self, m: int) -> Dimensions:
        n = m if self.ablation == "no-cond" else self.n_cond
        return Dimensions(m, n, self.d_z, self.rul_cap)


@dataclass
class IterationRecord:
    iteration: int
    L_D1: float | None
    L_E1G1: float | None
    L_recon1: float | None
    L_D2: float
    L_E2G2: float
    L_recon2: float | None
    L_dist: float
    composite_ce: float | None
    composite_rp: float
    # second distortion term alone: squared shortfall on normal-stage samples
    dist_hinge: float = 0.0


@dataclass
class TrainReport:
    records: list[IterationRecord] = field(default_factory=list)
    stop_reason: str = "max_iterations"
    best_iteration: int | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", *REPORT_FIELDS])
            for r in self.records:
                w.writerow([r.iteration, *("" if getattr(r, k) is None else format(getattr(r, k), ".17g")
                                           for k in REPORT_FIELDS)])


IterationHook = Callable[[int, BaceRulModel, "L.CeBatch | None", L.RpBatch, IterationRecord], None]


class Trainer:
    """Holds the mutable training state: model, one Adam state per network, rng."""

    def __init__(self, train_data: LabeledSet, cfg: TrainConfig):
        cfg.validate()
        if len(train_data) < 2:
            raise UsageError("need at least 2 training samples")
        if not np.any(~train_data.normal):
            raise UsageError("training data has no accelerated-stage samples")
        if train_data.rul_cap != cfg.rul_cap:
            raise ConfigError(f"data labeled with rul_cap={train_data.rul_cap} but config says {cfg.rul_cap}")
        self.cfg = cfg
        self.rng = nn.make_rng(cfg.seed)
        norm = fit_normalizer(train_data.x)
        self.x = norm.apply(train_data.x)
        self.model = build_model(cfg.dims_for(train_data.m), norm, self.rng, cfg.shapes, cfg.ablation)
        self.t = train_data.t * self.model.rul_scale
        self.accel_idx = np.flatnonzero(~train_data.normal)
        self.normal_idx = np.flatnonzero(train_data.normal)
        lrs = dict(cfg.group_learning_rates)
        self.adam = {name: nn.AdamState.for_params(net, lrs.get(name, cfg.learning_rate))
                     for name, net in self.model.networks().items()}

    def _step(self, grads: L.Grads, scale: float = 1.0) -> None:
        for name, g in grads.items():
            if scale != 1.0:
                g = [scale * a for a in g]
            nn.adam_step(self.adam[name], getattr(self.model, name), g)

    def _pick(self, pool: np.ndarray) -> np.ndarray:
        size = min(self.cfg.batch_size, len(pool))
        return self.rng.choice(pool, size=size, replace=False)

    def sample_ce_batch(self) -> L.CeBatch:
        idx = self._pick(np.arange(len(self.x)))
        c_eps = nn.sample_uniform(self.rng, (len(idx), self.model.dims.n), NOISE_LOW, NOISE_HIGH)
        return L.CeBatch(self.x[idx], c_eps)

    def sample_rp_batch(self) -> L.RpBatch:
        dz = self.model.dims.d_z
        a = self._pick(self.accel_idx)
        nrm = self._pick(self.normal_idx) if len(self.normal_idx) else np.empty(0, dtype=int)
        al = self._pick(np.arange(len(self.x)))
        # conditions come from the current encoder in eval mode; no gradient reaches it
        c = {}
        for key, idx in (("a", a), ("n", nrm), ("all", al)):
            c[key] = (encode_condition(self.model, self.x[idx]) if len(idx)
                      else np.empty((0, self.model.dims.n)))
        z = {key: nn.sample_uniform(self.rng, (len(idx), dz), NOISE_LOW, NOISE_HIGH) if len(idx)
             else np.empty((0, dz)) for key, idx in (("a", a), ("n", nrm), ("all", al))}
        return L.RpBatch(self.t[a], c["a"], z["a"], self.t[nrm], c["n"], z["n"],
                         self.t[al], c["all"], z["all"])

    def ce_phase(self) -> L.CeBatch:
        cfg, rng, m = self.cfg, self.rng, self.model
        batch = self.sample_ce_batch()
        for _ in range(cfg.d_updates):
            self._step(L.loss_d1(m, batch, rng)[1], cfg.weights.lambda11)
        for _ in range(cfg.k_ge_updates):
            _, g_adv = L.loss_e1g1(m, batch, rng)
            _, g_rec = L.loss_recon1(m, batch.xs, rng)
            w = cfg.weights.lambda12
            self._step({k: [w * a + b for a, b in zip(g_adv[k], g_rec[k])] for k in g_adv})
        return batch

    def rp_phase(self) -> L.RpBatch:
        cfg, rng, m = self.cfg, self.rng, self.model
        batch = self.sample_rp_batch()
        for _ in range(cfg.d_updates):
            self._step(L.loss_d2(m, batch, rng)[1], cfg.weights.lambda21)
        for _ in range(cfg.k_ge_updates):
            _, g_adv = L.loss_e2g2(m, batch, rng)
            total = {k: [cfg.weights.lambda22 * a for a in v] for k, v in g_adv.items()}
            _, g_dist = L.loss_dist(m, batch, rng)
            total["g2"] = [a + b for a, b in zip(total["g2"], g_dist["g2"])]
            if m.e2 is not None:
                _, g_rec = L.loss_recon2(m, batch.t_all, batch.c_all, rng)
                for k in g_rec:
                    total[k] = [a + b for a, b in zip(total[k], g_rec[k])]
            self._step(total)
        return batch

    def evaluate_losses(self, iteration: int, ce: L.CeBatch | None, rp: L.RpBatch) -> IterationRecord:
        """Eval-mode losses on the iteration's own batches."""
        m, w = self.model, self.cfg.weights
        ld1 = le1g1 = lrec1 = cce = None
        if ce is not None:
            ld1 = L.loss_d1(m, ce)[0]
            le1g1 = L.loss_e1g1(m, ce)[0]
            lrec1 = L.loss_recon1(m, ce.xs)[0]
            cce = L.composite_ce(w, ld1, le1g1, lrec1)
        ld2 = L.loss_d2(m, rp)[0]
        le2g2 = L.loss_e2g2(m, rp)[0]
        term1, hinge, _ = L.dist_terms(m, rp)
        ldist = term1 + hinge
        lrec2 = L.loss_recon2(m, rp.t_all, rp.c_all)[0] if m.e2 is not None else None
        crp = L.composite_rp(w, ld2, le2g2, lrec2 or 0.0, ldist)
        return IterationRecord(iteration, ld1, le1g1, lrec1, ld2, le2g2, lrec2, ldist, cce, crp, hinge)


def _check_record(rec: IterationRecord) -> None:
    for name in REPORT_FIELDS:
        v = getattr(rec, name)
        if v is not None and not math.isfinite(v):
            raise NumericError(f"{name} became non-finite at iteration {rec.iteration}")


def train(train_data: LabeledSet, cfg: TrainConfig,
          on_iteration: IterationHook | None = None) -> tuple[BaceRulModel, TrainReport]:
    """Alternate the condition-encoding and RUL phases until the smoothed
    RUL reconstruction loss stalls; return the best snapshot and the report.

    The stopping signal is ``L_recon2``, or ``L_dist`` when the model has no
    RUL encoder.
    """
    tr = Trainer(train_data, cfg)
    report = TrainReport()
    signal_name = "L_recon2" if tr.model.e2 is not None else "L_dist"
    window: deque[float] = deque(maxlen=cfg.ma_window)
    best, best_model, stale = math.inf, None, 0

    for it in range(1, cfg.max_iterations + 1):
        ce = tr.ce_phase() if tr.model.has_conditional_space else None
        rp = tr.rp_phase()
        rec = tr.evaluate_losses(it, ce, rp)
        _check_record(rec)
        report.records.append(rec)
        if on_iteration is not None:
            on_iteration(it, tr.model, ce, rp, rec)
        window.append(getattr(rec, signal_name))
        if it % cfg.eval_every == 0 and len(window) == window.maxlen:
            smoothed = sum(window) / len(window)
            if smoothed < best:
                best, best_model, stale = smoothed, tr.model.copy(), 0
                report.best_iteration = it
            else:
                stale += 1
                if stale >= cfg.patience:
                    report.stop_reason = "patience"
                    log.info("stopping at iteration %d: %s stalled", it, signal_name)
                    break
    return (best_model if best_model is not None else tr.model), report


def train_ablated(train_data: LabeledSet, cfg: TrainConfig,
                  on_iteration: IterationHook | None = None) -> tuple[BaceRulModel, TrainReport]:
    """Same as :func:`train`; the variant is picked by ``cfg.ablation``."""
    return train(train_data, cfg, on_iteration)


def config_fields() -> tuple[str, ...]:
    return tuple(f.name for f in fields(TrainConfig))
