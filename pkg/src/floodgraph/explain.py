"""Exact interventional Shapley values, importance rankings and attribution maps."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from math import factorial
from pathlib import Path

import numpy as np

from .factors import FACTOR_NAMES, FactorStack
from .graph import watershed_features
from .raster import Grid, check_aligned

MAX_FEATURES = 20
_LOGIT_CLIP = 1e-12


@dataclass(frozen=True)
class Attribution:
    per_sample: np.ndarray
    base_value: float
    factor_names: tuple
    predictions: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.per_sample.shape[0]

    def efficiency_residual(self) -> np.ndarray:
        return self.per_sample.sum(axis=1) - (self.predictions - self.base_value)

    def to_csv(self, path, sample_ids=None) -> None:
        ids = range(self.n_samples) if sample_ids is None else sample_ids
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", *(f"phi_{n}" for n in self.factor_names),
                        "base_value", "prediction"])
            for sid, phi, pred in zip(ids, self.per_sample, self.predictions):
                w.writerow([sid, *(repr(float(v)) for v in phi),
                            repr(float(self.base_value)), repr(float(pred))])


def _output_fn(model, output: str):
    if output not in ("probability", "logit"):
        raise ValueError(f"output must be 'probability' or 'logit', got {output!r}")
    if hasattr(model, "predict_proba"):
        def prob(X):
            return model.predict_proba(X)[:, 1]
    elif callable(model):
        prob = model
    else:
        raise TypeError("model needs predict_proba or must be callable")
    if output == "probability":
        return lambda X: np.asarray(prob(X), dtype=np.float64)

    return lambda X: _logit(np.asarray(prob(X), dtype=np.float64))


def _coalition_tables(d: int):
    masks = np.arange(1 << d)
    bits = ((masks[:, None] >> np.arange(d)) & 1).astype(bool)
    size = bits.sum(axis=1)
    w = np.array([factorial(s) * factorial(d - s - 1) / factorial(d) for s in range(d)])
    return bits, size, w


def _logit(p):
    p = np.clip(p, _LOGIT_CLIP, 1 - _LOGIT_CLIP)
    return np.log(p) - np.log1p(-p)


def exact_shapley(model, samples, background, output: str = "probability",
                  factor_names=None, method: str = "auto") -> Attribution:
    """Shapley values by enumerating every feature coalition.

    The value of coalition S is the model output averaged over background rows
    whose features in S are replaced by the sample's.  ``model`` may be a
    fitted classifier (flood probability is explained) or a callable mapping a
    feature matrix to outputs; when ``output='logit'`` probabilities are
    converted to log-odds first.

    ``method='rows'`` evaluates the model on all ``2**d * n_background`` hybrid
    rows.  Tree ensembles exposing ``coalition_proba`` get the same coalition
    values from a single pass over their trees (``method='tree'``); ``'auto'``
    picks that route when available.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    B = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if B.shape[0] == 0 or B.size == 0:
        raise ValueError("background set is empty")
    d = X.shape[1]
    if B.shape[1] != d:
        raise ValueError(f"background has {B.shape[1]} features, samples have {d}")
    if d > MAX_FEATURES:
        raise ValueError(f"exact enumeration refused for d={d} > {MAX_FEATURES}")
    if method not in ("auto", "rows", "tree"):
        raise ValueError(f"unknown method {method!r}")
    use_tree = method == "tree" or (method == "auto" and hasattr(model, "coalition_proba"))
    if use_tree and not hasattr(model, "coalition_proba"):
        raise TypeError("model has no coalition_proba for the tree route")
    f = _output_fn(model, output)
    bits, size, w = _coalition_tables(d)
    n_coal, n_bg = bits.shape[0], B.shape[0]

    def values(x):
        if use_tree:
            V = model.coalition_proba(x, B)
            if output == "logit":
                V = _logit(V)
            return V.mean(axis=0)
        rows = np.where(bits[:, None, :], x[None, None, :], B[None, :, :])
        return f(rows.reshape(-1, d)).reshape(n_coal, n_bg).mean(axis=1)

    phi = np.zeros((X.shape[0], d))
    preds = np.empty(X.shape[0])
    base = None
    for i, x in enumerate(X):
        v = values(x)
        if base is None:
            base = float(v[0])
        preds[i] = v[-1]
        for j in range(d):
            S = np.flatnonzero(~bits[:, j])
            phi[i, j] = np.sum(w[size[S]] * (v[S | (1 << j)] - v[S]))
    names = tuple(factor_names) if factor_names is not None else (
        FACTOR_NAMES if d == len(FACTOR_NAMES) else tuple(f"f{j}" for j in range(d))
    )
    return Attribution(per_sample=phi, base_value=base, factor_names=names, predictions=preds)


def global_importance(attr: Attribution) -> list:
    """(factor, mean |phi|, share) sorted by decreasing importance, canonical order on ties."""
    mean_abs = np.abs(attr.per_sample).mean(axis=0)
    total = mean_abs.sum()
    order = sorted(range(mean_abs.size), key=lambda j: (-mean_abs[j], j))
    return [
        (attr.factor_names[j], float(mean_abs[j]), float(mean_abs[j] / total) if total else 0.0)
        for j in order
    ]


def dominant_factor(phi: np.ndarray) -> np.ndarray:
    """Index of the largest |phi| per row; first index wins ties."""
    return np.argmax(np.abs(np.atleast_2d(phi)), axis=1)


def dominant_factor_map(model, stack: FactorStack, background, partition=None,
                        max_cells: int | None = None, seed: int = 0,
                        output: str = "probability") -> tuple:
    """Raster of dominant factor indices plus the underlying attribution.

    With a watershed ``partition`` one attribution is computed per watershed
    from its mean factor vector and painted over its cells; otherwise cells
    are attributed individually (a seeded subsample of ``max_cells`` cells when
    given, the rest left as nodata).
    """
    template = stack.template
    out = np.full(template.shape, template.nodata)
    if partition is not None:
        check_aligned(partition.labels, template)
        feats = watershed_features(partition, stack)
        attr = exact_shapley(model, feats, background, output, stack.names)
        dom = dominant_factor(attr.per_sample)
        ok = partition.labels.valid
        out[ok] = dom[partition.labels.values[ok].astype(np.int64)]
        return template.like(out), attr
    X, flat = stack.cell_matrix()
    if max_cells is not None and flat.size > max_cells:
        pick = np.sort(np.random.default_rng(seed).choice(flat.size, max_cells, replace=False))
        X, flat = X[pick], flat[pick]
    attr = exact_shapley(model, X, background, output, stack.names)
    out.ravel()[flat] = dominant_factor(attr.per_sample)
    return template.like(out), attr


@dataclass(frozen=True)
class DistrictSummary:
    mean_abs_phi: dict
    dominant: dict
    n_samples: dict
    n_outside: int
    empty_districts: tuple


def district_aggregate(attr: Attribution, x, y, districts: Grid) -> DistrictSummary:
    """Per-district mean |phi| for attributions located at points (x, y)."""
    r, c, inside = districts.cell_index(np.asarray(x), np.asarray(y))
    inside = inside & districts.valid[r, c]
    ids = np.where(inside, districts.values[r, c], np.nan)
    present = np.unique(districts.values[districts.valid]).astype(np.int64)
    mean_abs, dominant, counts, empty = {}, {}, {}, []
    for dist in present:
        sel = ids == dist
        if not sel.any():
            empty.append(int(dist))
            continue
        m = np.abs(attr.per_sample[sel]).mean(axis=0)
        mean_abs[int(dist)] = {n: float(v) for n, v in zip(attr.factor_names, m)}
        dominant[int(dist)] = attr.factor_names[int(np.argmax(m))]
        counts[int(dist)] = int(sel.sum())
    return DistrictSummary(mean_abs, dominant, counts, int((~inside).sum()), tuple(empty))
