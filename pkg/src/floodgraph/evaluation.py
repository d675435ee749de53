"""Spatial blocks, leave-one-block-out cross-validation and classification metrics."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import rankdata
from sklearn.base import clone

from .exceptions import DomainError, EvaluationError
from .factors import SampleTable
from .models.baselines import make_baseline
from .models.config import TrainConfig
from .models.sage import GraphSAGEClassifier

MAX_LLOYD_ITER = 300


@dataclass(frozen=True)
class MetricReport:
    auc: float
    f1_macro: float
    kappa: float
    tpr: float
    fpr: float
    brier: float
    threshold: float
    n_pos: int
    n_neg: int
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0


@dataclass(frozen=True)
class BlockAssignment:
    k: int
    block_of_watershed: dict
    centroids: np.ndarray
    inertia_history: tuple = ()

    def blocks_for(self, ids) -> np.ndarray:
        return np.array([self.block_of_watershed[int(i)] for i in ids], dtype=np.int64)


@dataclass
class FoldResult:
    fold: int
    model: str
    metrics: MetricReport
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def n_train(self):
        return int(self.train_idx.size)

    @property
    def n_test(self):
        return int(self.test_idx.size)


@dataclass
class CVResult:
    model: str
    folds: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def aucs(self) -> np.ndarray:
        return np.array([f.metrics.auc for f in self.folds])

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.aucs))

    @property
    def sd_auc(self) -> float:
        a = self.aucs
        return float(np.std(a, ddof=1)) if a.size > 1 else 0.0


def roc_auc(probs, labels) -> float:
    """Mann-Whitney AUC with half credit for tied scores."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DomainError("AUC undefined: labels contain a single class")
    ranks = rankdata(p)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def compute_metrics(probs, labels, threshold: float = 0.5) -> MetricReport:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} probabilities vs {y.shape} labels")
    try:
        auc = roc_auc(p, y)
    except DomainError as exc:
        warnings.warn(str(exc))
        auc = float("nan")
    pred = p >= threshold
    pos = y == 1
    tp = int((pred & pos).sum())
    fp = int((pred & ~pos).sum())
    tn = int((~pred & ~pos).sum())
    fn = int((~pred & pos).sum())
    n = y.size

    def _f1(a, b, c):
        return 2 * a / (2 * a + b + c) if (2 * a + b + c) else 0.0

    f1_macro = (_f1(tp, fp, fn) + _f1(tn, fn, fp)) / 2.0
    p_o = (tp + tn) / n
    p_e = ((tp + fp) * (tp + fn) + (fn + tn) * (fp + tn)) / (n * n)
    kappa = (p_o - p_e) / (1 - p_e) if p_e < 1 else (1.0 if p_o == 1 else 0.0)
    return MetricReport(
        auc=auc,
        f1_macro=float(f1_macro),
        kappa=float(kappa),
        tpr=tp / (tp + fn) if tp + fn else float("nan"),
        fpr=fp / (fp + tn) if fp + tn else float("nan"),
        brier=float(np.mean((p - y) ** 2)),
        threshold=threshold,
        n_pos=int(pos.sum()),
        n_neg=int((~pos).sum()),
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


def kmeans_blocks(centroids, k: int, seed: int = 0) -> BlockAssignment:
    """Lloyd k-means on watershed centroids with seeded farthest-first starts.

    ``centroids`` is an ``(m, 2)`` array (or a mapping id -> (x, y)); rows are
    taken as watershed ids ``0..m-1`` when an array is given.
    """
    if isinstance(centroids, dict):
        ids = sorted(centroids)
        P = np.array([centroids[i] for i in ids], dtype=np.float64)
    else:
        P = np.asarray(centroids, dtype=np.float64).reshape(-1, 2)
        ids = list(range(P.shape[0]))
    m = P.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"k={k} must lie in [1, {m}]")
    rng = np.random.default_rng(seed)
    centers = [P[int(rng.integers(m))]]
    d2 = ((P - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        centers.append(P[nxt])
        d2 = np.minimum(d2, ((P - P[nxt]) ** 2).sum(axis=1))
    C = np.array(centers)

    assign = None
    history = []
    for _ in range(MAX_LLOYD_ITER):
        D = ((P[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(D, axis=1)
        new = _repair_empty(P, C, new, k)
        history.append(float(((P - C[new]) ** 2).sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        C = np.array([P[assign == j].mean(axis=0) for j in range(k)])
        history.append(float(((P - C[assign]) ** 2).sum()))
    return BlockAssignment(
        k=k,
        block_of_watershed={int(i): int(b) for i, b in zip(ids, assign)},
        centroids=C,
        inertia_history=tuple(history),
    )


def _repair_empty(P, C, assign, k):
    assign = assign.copy()
    for j in range(k):
        if (assign == j).any():
            continue
        sizes = np.bincount(assign, minlength=k)
        big = int(np.argmax(sizes))
        members = np.flatnonzero(assign == big)
        far = members[np.argmax(((P[members] - C[big]) ** 2).sum(axis=1))]
        assign[far] = j
    return assign


def watershed_centroids(partition) -> np.ndarray:
    """``(count, 2)`` mean cell-centre coordinates per watershed."""
    labels = partition.labels
    ok = labels.valid.ravel()
    lab = labels.values.ravel()[ok].astype(np.int64)
    xs, ys = labels.cell_centers()
    cnt = np.bincount(lab, minlength=partition.count)
    cx = np.bincount(lab, weights=xs.ravel()[ok], minlength=partition.count) / cnt
    cy = np.bincount(lab, weights=ys.ravel()[ok], minlength=partition.count) / cnt
    return np.column_stack([cx, cy])


def assign_blocks(table: SampleTable, partition, blocks: BlockAssignment) -> SampleTable:
    """Give every row the block of its nearest watershed centroid (lowest id on ties).

    ``partition`` may be a :class:`WatershedPartition` or an ``(m, 2)`` array of
    watershed centroids indexed by id.
    """
    cents = partition if isinstance(partition, np.ndarray) else watershed_centroids(partition)
    pts = np.column_stack([table.x, table.y])
    D = ((pts[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(D, axis=1)
    block = np.array([blocks.block_of_watershed[int(w)] for w in nearest], dtype=np.int64)
    return replace(table, block_id=block, dropped=table.dropped)


def _fold_seed(config: TrainConfig, fold: int) -> TrainConfig:
    return replace(config, seed=config.seed + 1000 * (fold + 1))


def lobo_folds(block_id: np.ndarray, k: int):
    for b in range(k):
        test = np.flatnonzero(block_id == b)
        train = np.flatnonzero((block_id != b) & (block_id >= 0))
        yield b, train, test


def _degenerate(y_train, y_test):
    return np.unique(y_test).size < 2 or np.unique(y_train).size < 2


def lobo_cv(table: SampleTable, blocks: BlockAssignment, model_kind="forest",
            config: TrainConfig | None = None) -> CVResult:
    """Leave-one-block-out CV of one pixel model.

    ``model_kind`` is a kind name or an unfitted estimator (cloned per fold).
    """
    config = config or TrainConfig()
    name = model_kind if isinstance(model_kind, str) else type(model_kind).__name__
    result = CVResult(model=name)
    for b, tr, te in lobo_folds(table.block_id, blocks.k):
        if _degenerate(table.label[tr], table.label[te]):
            warnings.warn(f"fold {b}: single-class train or test block, skipped")
            result.skipped.append(b)
            continue
        if isinstance(model_kind, str):
            est = make_baseline(model_kind, _fold_seed(config, b))
        else:
            est = clone(model_kind)
        est.fit(table.features[tr], table.label[tr])
        probs = est.predict_proba(table.features[te])[:, 1]
        result.folds.append(FoldResult(b, name, compute_metrics(probs, table.label[te]), tr, te))
    if not result.folds:
        raise EvaluationError(f"all folds degenerate for model {name!r}")
    return result


def lobo_cv_baselines(table: SampleTable, blocks: BlockAssignment,
                      config: TrainConfig | None = None,
                      kinds=("logistic", "forest", "gbt", "stacking")) -> dict:
    """LOBO CV of several pixel models, sharing base fits with the stacking model."""
    config = config or TrainConfig()
    results = {k: CVResult(model=k) for k in kinds}
    for b, tr, te in lobo_folds(table.block_id, blocks.k):
        if _degenerate(table.label[tr], table.label[te]):
            warnings.warn(f"fold {b}: single-class train or test block, skipped")
            for r in results.values():
                r.skipped.append(b)
            continue
        cfg = _fold_seed(config, b)
        Xtr, ytr, Xte = table.features[tr], table.label[tr], table.features[te]
        fitted = {}
        for kind in ("logistic", "forest", "gbt"):
            if kind in kinds or "stacking" in kinds:
                fitted[kind] = make_baseline(kind, cfg).fit(Xtr, ytr)
        if "stacking" in kinds:
            stack = make_baseline("stacking", cfg)
            fitted["stacking"] = stack.fit(
                Xtr, ytr, fitted_bases=[fitted["logistic"], fitted["forest"], fitted["gbt"]]
            )
        for kind in kinds:
            probs = fitted[kind].predict_proba(Xte)[:, 1]
            results[kind].folds.append(
                FoldResult(b, kind, compute_metrics(probs, table.label[te]), tr, te)
            )
    for kind, r in results.items():
        if not r.folds:
            raise EvaluationError(f"all folds degenerate for model {kind!r}")
    return results


def lobo_cv_graph(graph, blocks: BlockAssignment, config: TrainConfig | None = None) -> CVResult:
    """LOBO CV of GraphSAGE: held-out block nodes are excluded from the loss only."""
    config = config or TrainConfig()
    node_block = blocks.blocks_for(graph.node_ids)
    result = CVResult(model="sage")
    for b, tr, te in lobo_folds(node_block, blocks.k):
        if _degenerate(graph.labels[tr], graph.labels[te]):
            warnings.warn(f"fold {b}: single-class train or test block, skipped")
            result.skipped.append(b)
            continue
        mask = np.zeros(graph.n_nodes, dtype=bool)
        mask[tr] = True
        model = GraphSAGEClassifier.from_config(_fold_seed(config, b)).fit(graph, mask)
        probs = model.predict_proba(graph)[te, 1]
        result.folds.append(FoldResult(b, "sage", compute_metrics(probs, graph.labels[te]), tr, te))
    if not result.folds:
        raise EvaluationError("all folds degenerate for model 'sage'")
    return result


def write_metrics_csv(results, path) -> None:
    """Per-fold metrics for one or more :class:`CVResult` objects."""
    if isinstance(results, CVResult):
        results = [results]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "model", "auc", "f1_macro", "kappa", "tpr", "fpr", "brier",
                    "n_train", "n_test"])
        for r in results:
            for f in r.folds:
                m = f.metrics
                w.writerow([f.fold, f.model, _fmt(m.auc), _fmt(m.f1_macro), _fmt(m.kappa),
                            _fmt(m.tpr), _fmt(m.fpr), _fmt(m.brier), f.n_train, f.n_test])


def _fmt(v: float) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"
