"""Pixel-level classifiers: logistic regression, random forest, boosted trees, stacking.

All four follow the scikit-learn estimator protocol (``fit``/``predict_proba``/
``get_params``) so they drop into pipelines and ``clone``.  Fitted models
serialise to plain JSON dictionaries via ``to_dict``/``model_from_dict``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import StratifiedKFold
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..exceptions import TrainingError
from . import _tree_kernels as tk
from .config import TrainConfig

KINDS = ("logistic", "forest", "gbt", "stacking")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z)))


def balanced_class_weights(y) -> np.ndarray:
    """Per-class weights ``N / (2 N_c)`` for labels in {0, 1}."""
    y = np.asarray(y)
    counts = np.bincount(y, minlength=2).astype(np.float64)
    if (counts == 0).any():
        raise TrainingError("both classes are required for training")
    return y.size / (2.0 * counts)


def _check_binary(y):
    y = np.asarray(y).astype(np.int64)
    if set(np.unique(y)) - {0, 1}:
        raise TrainingError("labels must be 0/1")
    if np.unique(y).size < 2:
        raise TrainingError("training data contains a single class")
    return y


class _BinaryClassifier(ClassifierMixin, BaseEstimator):
    kind = ""

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def predict_proba(self, X):
        p = np.clip(self._positive_proba(self._check_X(X)), 0.0, 1.0)
        return np.column_stack([1.0 - p, p])

    def _check_X(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, model was trained with {self.n_features_in_}"
            )
        return X


class LogisticModel(_BinaryClassifier):
    """L2 logistic regression on standardised features with balanced class weights."""

    kind = "logistic"

    def __init__(self, C=1.0, class_weight="balanced", max_iter=2000):
        self.C = C
        self.class_weight = class_weight
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = _check_binary(y)
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.scale_ = np.where(scale > 0, scale, 1.0)
        lr = LogisticRegression(C=self.C, class_weight=self.class_weight, max_iter=self.max_iter)
        lr.fit((X - self.mean_) / self.scale_, y)
        self.coef_ = lr.coef_.ravel().copy()
        self.intercept_ = float(lr.intercept_[0])
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def _positive_proba(self, X):
        return _sigmoid(((X - self.mean_) / self.scale_) @ self.coef_ + self.intercept_)

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": self.get_params(),
            "mean": self.mean_.tolist(),
            "scale": self.scale_.tolist(),
            "coef": self.coef_.tolist(),
            "intercept": self.intercept_,
        }

    @classmethod
    def from_dict(cls, d):
        m = cls(**d["params"])
        m.mean_ = np.array(d["mean"])
        m.scale_ = np.array(d["scale"])
        m.coef_ = np.array(d["coef"])
        m.intercept_ = float(d["intercept"])
        m.classes_ = np.array([0, 1])
        m.n_features_in_ = m.coef_.size
        return m


class _TreeEnsemble(_BinaryClassifier):
    """Shared storage of fitted trees as padded ``(n_trees, max_nodes)`` arrays."""

    def _alloc(self, n_trees):
        m = 2 ** (self.max_depth + 1) - 1
        self.tree_feature_ = np.full((n_trees, m), -1, dtype=np.int64)
        self.tree_threshold_ = np.zeros((n_trees, m))
        self.tree_left_ = np.full((n_trees, m), -1, dtype=np.int64)
        self.tree_right_ = np.full((n_trees, m), -1, dtype=np.int64)
        self.tree_value_ = np.zeros((n_trees, m))

    def _grow(self, t, Xb, thr, nthr, s1, s2, idx, mode, max_features, lam, min_child, seed):
        return tk.build_tree(
            Xb, nthr, thr, s1, s2, idx, mode, self.max_depth, max_features, lam, min_child,
            seed, self.tree_feature_[t], self.tree_threshold_[t], self.tree_left_[t],
            self.tree_right_[t], self.tree_value_[t],
        )

    def tree_sum(self, X):
        return tk.predict_sum(
            np.ascontiguousarray(X, dtype=np.float64), self.tree_feature_,
            self.tree_threshold_, self.tree_left_, self.tree_right_, self.tree_value_,
        )

    def coalition_tree_sum(self, x, background):
        """``(n_background, 2**d)`` tree sums of rows mixing ``x`` (features in S)
        with each background row (features outside S)."""
        check_is_fitted(self, "n_features_in_")
        return tk.coalition_sums(
            np.ascontiguousarray(x, dtype=np.float64),
            np.ascontiguousarray(background, dtype=np.float64),
            self.tree_feature_, self.tree_threshold_, self.tree_left_, self.tree_right_,
            self.tree_value_,
        )

    def _tree_dict(self):
        return {
            "feature": self.tree_feature_.tolist(),
            "threshold": self.tree_threshold_.tolist(),
            "left": self.tree_left_.tolist(),
            "right": self.tree_right_.tolist(),
            "value": self.tree_value_.tolist(),
        }

    def _load_trees(self, d):
        self.tree_feature_ = np.array(d["feature"], dtype=np.int64)
        self.tree_threshold_ = np.array(d["threshold"], dtype=np.float64)
        self.tree_left_ = np.array(d["left"], dtype=np.int64)
        self.tree_right_ = np.array(d["right"], dtype=np.int64)
        self.tree_value_ = np.array(d["value"], dtype=np.float64)


class ForestModel(_TreeEnsemble):
    """Bagged Gini trees; the probability is the mean class-1 leaf proportion.

    Leaf proportions are computed with the (balanced) class weights, so they
    are weighted proportions when classes are imbalanced.
    """

    kind = "forest"

    def __init__(self, n_estimators=500, max_depth=6, max_features="sqrt",
                 class_weight="balanced", max_bins=64, random_state=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.max_features = max_features
        self.class_weight = class_weight
        self.max_bins = max_bins
        self.random_state = random_state

    def _n_features_per_split(self, d):
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(d)))
        if self.max_features is None:
            return d
        return int(self.max_features)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = _check_binary(y)
        n, d = X.shape
        cw = balanced_class_weights(y) if self.class_weight == "balanced" else np.ones(2)
        thr, nthr = tk.make_thresholds(X, self.max_bins)
        Xb = tk.bin_features(X, thr, nthr)
        rng = np.random.default_rng(self.random_state)
        self._alloc(self.n_estimators)
        mf = self._n_features_per_split(d)
        base_w = cw[y]
        for t in range(self.n_estimators):
            counts = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
            idx = np.flatnonzero(counts)
            w = counts * base_w
            seed = int(rng.integers(0, 2**31 - 1))
            self._grow(t, Xb, thr, nthr, w * y, w, idx, tk.GINI, mf, 0.0, 0.0, seed)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = d
        return self

    def _positive_proba(self, X):
        return self.tree_sum(X) / self.tree_feature_.shape[0]

    def coalition_proba(self, x, background):
        s = self.coalition_tree_sum(x, background) / self.tree_feature_.shape[0]
        return np.clip(s, 0.0, 1.0)

    def to_dict(self):
        return {"kind": self.kind, "params": self.get_params(), "n_features": self.n_features_in_,
                "trees": self._tree_dict()}

    @classmethod
    def from_dict(cls, d):
        m = cls(**d["params"])
        m._load_trees(d["trees"])
        m.classes_ = np.array([0, 1])
        m.n_features_in_ = int(d.get("n_features", 12))
        return m


class BoostedTreesModel(_TreeEnsemble):
    """Logistic-loss gradient boosting with second-order (Newton) leaf values.

    Positive rows carry weight ``pos_weight``; the score starts at the weighted
    log-odds of the training labels.
    """

    kind = "gbt"

    def __init__(self, n_estimators=500, max_depth=6, learning_rate=0.1, pos_weight=5.0,
                 reg_lambda=1.0, min_child_weight=1.0, max_bins=64, random_state=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.pos_weight = pos_weight
        self.reg_lambda = reg_lambda
        self.min_child_weight = min_child_weight
        self.max_bins = max_bins
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = _check_binary(y)
        n, d = X.shape
        w = np.where(y == 1, self.pos_weight, 1.0)
        thr, nthr = tk.make_thresholds(X, self.max_bins)
        Xb = tk.bin_features(X, thr, nthr)
        pbar = float((w * y).sum() / w.sum())
        self.base_score_ = float(np.log(pbar / (1 - pbar)))
        self._alloc(self.n_estimators)
        F = np.full(n, self.base_score_)
        rng = np.random.default_rng(self.random_state)
        all_idx = np.arange(n)
        for t in range(self.n_estimators):
            p = _sigmoid(F)
            g = w * (p - y)
            h = np.maximum(w * p * (1 - p), 1e-16)
            seed = int(rng.integers(0, 2**31 - 1))
            self._grow(t, Xb, thr, nthr, g, h, all_idx.copy(), tk.NEWTON, d,
                       self.reg_lambda, self.min_child_weight, seed)
            self.tree_value_[t] *= self.learning_rate
            F += tk.predict_sum(X, self.tree_feature_[t : t + 1], self.tree_threshold_[t : t + 1],
                                self.tree_left_[t : t + 1], self.tree_right_[t : t + 1],
                                self.tree_value_[t : t + 1])
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = d
        return self

    def decision_function(self, X):
        return self.base_score_ + self.tree_sum(self._check_X(X))

    def _positive_proba(self, X):
        return _sigmoid(self.base_score_ + self.tree_sum(X))

    def coalition_proba(self, x, background):
        s = self.coalition_tree_sum(x, background)
        return np.clip(_sigmoid(self.base_score_ + s), 0.0, 1.0)

    def to_dict(self):
        return {"kind": self.kind, "params": self.get_params(), "base_score": self.base_score_,
                "n_features": self.n_features_in_, "trees": self._tree_dict()}

    @classmethod
    def from_dict(cls, d):
        m = cls(**d["params"])
        m._load_trees(d["trees"])
        m.base_score_ = float(d["base_score"])
        m.classes_ = np.array([0, 1])
        m.n_features_in_ = int(d.get("n_features", 12))
        return m


class StackingModel(_BinaryClassifier):
    """Out-of-fold base-model probabilities feeding a logistic meta-learner."""

    kind = "stacking"

    def __init__(self, estimators=None, n_splits=5, random_state=0):
        self.estimators = estimators
        self.n_splits = n_splits
        self.random_state = random_state

    def _bases(self):
        if self.estimators is not None:
            return list(self.estimators)
        return [LogisticModel(), ForestModel(random_state=self.random_state),
                BoostedTreesModel(random_state=self.random_state)]

    def meta_features(self, X, y):
        """``(n, n_bases)`` out-of-fold positive-class probabilities."""
        X, y = check_X_y(X, y, dtype=np.float64)
        y = _check_binary(y)
        bases = self._bases()
        Z = np.zeros((X.shape[0], len(bases)))
        n_splits = min(self.n_splits, int(np.bincount(y).min()))
        if n_splits < 2:
            raise TrainingError("stacking needs at least 2 rows of each class")
        skf = StratifiedKFold(n_splits=n_splits, shuffle=True, random_state=self.random_state)
        for tr, te in skf.split(X, y):
            for j, base in enumerate(bases):
                Z[te, j] = clone(base).fit(X[tr], y[tr]).predict_proba(X[te])[:, 1]
        return Z

    def fit(self, X, y, fitted_bases=None):
        """Fit the meta-learner on out-of-fold probabilities.

        ``fitted_bases`` may supply base models already trained on exactly
        ``(X, y)``; they are reused instead of refitting.
        """
        X, y = check_X_y(X, y, dtype=np.float64)
        y = _check_binary(y)
        Z = self.meta_features(X, y)
        self.meta_ = LogisticRegression(max_iter=2000).fit(Z, y)
        if fitted_bases is not None:
            self.bases_ = list(fitted_bases)
        else:
            self.bases_ = [clone(b).fit(X, y) for b in self._bases()]
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def _positive_proba(self, X):
        Z = np.column_stack([b.predict_proba(X)[:, 1] for b in self.bases_])
        return self.meta_.predict_proba(Z)[:, 1]

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": {"n_splits": self.n_splits, "random_state": self.random_state},
            "bases": [b.to_dict() for b in self.bases_],
            "meta_coef": self.meta_.coef_.ravel().tolist(),
            "meta_intercept": float(self.meta_.intercept_[0]),
        }

    @classmethod
    def from_dict(cls, d):
        m = cls(**d["params"])
        m.bases_ = [model_from_dict(b) for b in d["bases"]]
        meta = LogisticRegression()
        meta.coef_ = np.array([d["meta_coef"]])
        meta.intercept_ = np.array([d["meta_intercept"]])
        meta.classes_ = np.array([0, 1])
        m.meta_ = meta
        m.classes_ = np.array([0, 1])
        m.n_features_in_ = m.bases_[0].n_features_in_
        return m


_REGISTRY = {c.kind: c for c in (LogisticModel, ForestModel, BoostedTreesModel, StackingModel)}


def model_from_dict(d: dict):
    return _REGISTRY[d["kind"]].from_dict(d)


def make_baseline(kind: str, config: TrainConfig | None = None):
    """Unfitted estimator of ``kind`` configured from ``config``."""
    cfg = config or TrainConfig()
    if kind == "logistic":
        return LogisticModel()
    if kind == "forest":
        return ForestModel(n_estimators=cfg.n_trees, max_depth=cfg.max_depth,
                           max_bins=cfg.max_bins, random_state=cfg.seed)
    if kind == "gbt":
        return BoostedTreesModel(n_estimators=cfg.n_trees, max_depth=cfg.max_depth,
                                 learning_rate=cfg.gbt_learning_rate,
                                 pos_weight=cfg.gbt_pos_weight, max_bins=cfg.max_bins,
                                 random_state=cfg.seed)
    if kind == "stacking":
        bases = [make_baseline(k, cfg) for k in ("logistic", "forest", "gbt")]
        return StackingModel(estimators=bases, n_splits=cfg.stacking_folds, random_state=cfg.seed)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")


def fit_baseline(kind: str, table, config: TrainConfig | None = None):
    """Fit a pixel model on a :class:`~floodgraph.factors.SampleTable`."""
    return make_baseline(kind, config).fit(table.features, table.label)


def predict_baseline(model, features) -> np.ndarray | float:
    """Flood probability for one 12-vector (returns a float) or a matrix of rows."""
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 1
    p = model.predict_proba(X.reshape(1, -1) if single else X)[:, 1]
    return float(p[0]) if single else p
