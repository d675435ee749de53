"""Split-conformal calibration, prediction sets, interval maps and coverage."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._io import write_json
from .exceptions import DomainError
from .raster import Grid
from .risk import CLASS_NAMES, classify_values

# Guards the ceiling against products like 0.9 * 10 = 9.000000000000002.
_CEIL_EPS = 1e-9


def _check_probs(p, what="probabilities"):
    p = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(p) | (p < 0) | (p > 1)):
        raise DomainError(f"{what} must lie in [0, 1]")
    return p


def conformal_index(n: int, alpha: float) -> int:
    """1-based rank of the calibration order statistic used as the quantile."""
    return math.ceil((1 - alpha) * (n + 1) - _CEIL_EPS)


@dataclass(frozen=True)
class CalibratedPredictor:
    alpha: float
    qhat: float
    n_cal: int
    scores: np.ndarray = field(repr=False)
    base: object = field(default=None, repr=False, compare=False)

    def predict_set(self, class_probs) -> frozenset:
        return predict_set(self, class_probs)

    def sets(self, p1) -> np.ndarray:
        """``(n, 2)`` boolean membership of classes 0 and 1 for flood probabilities ``p1``."""
        p1 = _check_probs(p1)
        return np.column_stack([p1 <= self.qhat, 1 - p1 <= self.qhat])

    def interval(self, p):
        p = np.asarray(p, dtype=np.float64)
        lower = np.maximum(p - self.qhat, 0.0)
        upper = np.minimum(p + self.qhat, 1.0)
        return lower, upper, upper - lower

    def predict_proba(self, X):
        if self.base is None:
            raise DomainError("calibrated predictor has no base model")
        return self.base.predict_proba(X)


def calibrate(probs_true_class, alpha: float = 0.10, base=None) -> CalibratedPredictor:
    """Calibrate on probabilities that each calibration row assigns its true class."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    p = _check_probs(probs_true_class).ravel()
    n = p.size
    if n < 1:
        raise ValueError("calibration set is empty")
    scores = np.sort(1.0 - p)
    k = conformal_index(n, alpha)
    if k > n:
        warnings.warn(f"n_cal={n} too small for alpha={alpha}; qhat saturates at 1")
        qhat = 1.0
    else:
        qhat = float(scores[k - 1])
    return CalibratedPredictor(alpha=alpha, qhat=qhat, n_cal=n, scores=scores, base=base)


def calibrate_model(model, X_cal, y_cal, alpha: float = 0.10) -> CalibratedPredictor:
    proba = model.predict_proba(X_cal)
    y = np.asarray(y_cal).astype(np.int64)
    return calibrate(proba[np.arange(y.size), y], alpha, base=model)


def predict_set(cal: CalibratedPredictor, class_probs) -> frozenset:
    probs = _check_probs(class_probs)
    return frozenset(int(c) for c in range(probs.size) if 1 - probs[c] <= cal.qhat)


def interval_maps(cal: CalibratedPredictor, susceptibility: Grid) -> tuple:
    ok = susceptibility.valid
    _check_probs(susceptibility.values[ok], "susceptibility values")
    lower, upper, width = cal.interval(susceptibility.values)
    return (
        susceptibility.masked(lower, ok),
        susceptibility.masked(upper, ok),
        susceptibility.masked(width, ok),
    )


@dataclass(frozen=True)
class CoverageReport:
    alpha: float
    qhat: float
    n_cal: int
    overall: float
    by_class: dict
    mean_width: float
    mean_half_width: float
    n_test: int
    n_by_class: dict
    n_empty_sets: int
    n_both_sets: int

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "qhat": self.qhat,
            "n_cal": self.n_cal,
            "n_test": self.n_test,
            "overall": self.overall,
            "by_class": dict(self.by_class),
            "n_by_class": dict(self.n_by_class),
            "mean_width": self.mean_width,
            "mean_half_width": self.mean_half_width,
            "n_empty_sets": self.n_empty_sets,
            "n_both_sets": self.n_both_sets,
        }

    def write(self, path) -> None:
        write_json(self.to_dict(), path)


def coverage_report(cal: CalibratedPredictor, test_probs, test_labels,
                    susceptibility_class=None) -> CoverageReport:
    """Empirical coverage overall and per susceptibility class.

    ``test_probs`` holds either ``(n, 2)`` class probabilities or the flood
    probability per row.  Classes default to the flood-probability classes.
    Strata with no rows report ``None``.
    """
    probs = _check_probs(test_probs)
    p1 = probs[:, 1] if probs.ndim == 2 else probs
    y = np.asarray(test_labels).astype(np.int64)
    if y.shape != p1.shape:
        raise ValueError("test probabilities and labels are not aligned")
    cls = classify_values(p1) if susceptibility_class is None else np.asarray(susceptibility_class)
    sets = cal.sets(p1)
    covered = sets[np.arange(y.size), y]
    _, _, width = cal.interval(p1)
    by_class, n_by_class = {}, {}
    for code, name in CLASS_NAMES.items():
        sel = cls == code
        n_by_class[name] = int(sel.sum())
        by_class[name] = float(covered[sel].mean()) if sel.any() else None
    n_set = sets.sum(axis=1)
    return CoverageReport(
        alpha=cal.alpha,
        qhat=cal.qhat,
        n_cal=cal.n_cal,
        overall=float(covered.mean()) if y.size else None,
        by_class=by_class,
        mean_width=float(width.mean()) if y.size else None,
        mean_half_width=float(width.mean() / 2) if y.size else None,
        n_test=int(y.size),
        n_by_class=n_by_class,
        n_empty_sets=int((n_set == 0).sum()),
        n_both_sets=int((n_set == 2).sum()),
    )


def synthetic_draws(n: int, rng, noise_strata=(), noise_rate: float = 0.0):
    """Exchangeable (probability, label) draws for coverage experiments.

    Flood probabilities are Beta(0.6, 1.2) distributed and labels Bernoulli
    in them, so the model is calibrated.  Rows whose susceptibility class is in
    ``noise_strata`` have their label flipped with probability ``noise_rate``.
    """
    p1 = rng.beta(0.6, 1.2, size=n)
    y = (rng.random(n) < p1).astype(np.int64)
    if noise_strata and noise_rate > 0:
        cls = classify_values(p1)
        flip = np.isin(cls, list(noise_strata)) & (rng.random(n) < noise_rate)
        y[flip] = 1 - y[flip]
    return p1, y
