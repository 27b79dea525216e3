"""RMSE, PHM08 score and MAPE over every cycle of a test set."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import LabeledSet
from .errors import NumericError, UsageError
from .model import BaceRulModel, predict_batch
from .nn import Rng

EARLY_SCALE = 13.0
LATE_SCALE = 10.0


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.size == 0 or pred.size != truth.size:
        raise UsageError(f"need equal non-empty lengths, got {pred.size} and {truth.size}")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def phm_score(pred, truth) -> float:
    """Asymmetric exponential penalty; late predictions (pred > truth) cost more."""
    pred, truth = _pair(pred, truth)
    d = np.asarray(pred - truth, dtype=np.longdouble)
    with np.errstate(over="ignore"):
        s = np.where(d < 0, np.expm1(-d / EARLY_SCALE), np.expm1(d / LATE_SCALE))
        total = s.sum()
    if not np.isfinite(total):
        raise NumericError("score overflowed")
    return float(total)


def mape(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    if np.any(truth == 0):
        raise UsageError("MAPE is undefined for a zero ground-truth RUL")
    return float(np.mean(np.abs((pred - truth) / truth)) * 100.0)


@dataclass
class EvalResult:
    rmse: float
    score: float
    mape: float
    n: int
    unit: np.ndarray
    cycle: np.ndarray
    truth: np.ndarray
    pred_mean: np.ndarray
    pred_std: np.ndarray

    def per_unit(self) -> list[tuple[int, int, float, float, float]]:
        """``(unit, n, rmse, score, mape)`` rows."""
        rows = []
        for u in np.unique(self.unit):
            sel = self.unit == u
            p, t = self.pred_mean[sel], self.truth[sel]
            rows.append((int(u), int(sel.sum()), rmse(p, t), phm_score(p, t), mape(p, t)))
        return rows

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["unit", "cycle", "true_rul", "pred_mean", "pred_std"])
            for i in range(self.n):
                w.writerow([int(self.unit[i]), int(self.cycle[i]), int(self.truth[i]),
                            format(self.pred_mean[i], ".17g"), format(self.pred_std[i], ".17g")])
            w.writerow(["summary", self.n, format(self.rmse, ".17g"),
                        format(self.score, ".17g"), format(self.mape, ".17g")])


def summarize(unit, cycle, truth, pred_mean, pred_std) -> EvalResult:
    return EvalResult(rmse(pred_mean, truth), phm_score(pred_mean, truth), mape(pred_mean, truth),
                      len(truth), np.asarray(unit), np.asarray(cycle), np.asarray(truth, dtype=float),
                      np.asarray(pred_mean, dtype=float), np.asarray(pred_std, dtype=float))


def evaluate(model: BaceRulModel, test: LabeledSet, rng: Rng, n_samples: int = 100) -> EvalResult:
    """Predict every cycle of ``test`` (raw features) and score against clipped labels."""
    if len(test) == 0:
        raise UsageError("test set is empty")
    samples = predict_batch(model, test.x, rng, n_samples)
    return summarize(test.unit, test.cycle, test.t, samples.mean(axis=1), samples.std(axis=1))
