import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import BaseEstimator, ClassifierMixin

from floodgraph.evaluation import (
    CVResult,
    assign_blocks,
    compute_metrics,
    kmeans_blocks,
    lobo_cv,
    lobo_cv_baselines,
    lobo_cv_graph,
    lobo_folds,
    roc_auc,
    write_metrics_csv,
)
from floodgraph.exceptions import DomainError, EvaluationError
from floodgraph.factors import SampleTable
from floodgraph.models import TrainConfig
from helpers import pairwise_auc, random_graph


class FeatureZeroModel(ClassifierMixin, BaseEstimator):
    """Returns feature 0 as the flood probability."""

    def fit(self, X, y):
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        p = np.clip(X[:, 0], 0, 1)
        return np.column_stack([1 - p, p])


class ConstantModel(FeatureZeroModel):
    def predict_proba(self, X):
        return np.full((len(X), 2), 0.5)


def hand_metrics(p, y, t=0.5):
    pred = p >= t
    tp = np.sum(pred & (y == 1))
    fp = np.sum(pred & (y == 0))
    tn = np.sum(~pred & (y == 0))
    fn = np.sum(~pred & (y == 1))
    n = len(y)
    f1_pos = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    f1_neg = 2 * tn / (2 * tn + fn + fp) if 2 * tn + fn + fp else 0.0
    po = (tp + tn) / n
    pe = ((tp + fp) / n) * ((tp + fn) / n) + ((tn + fn) / n) * ((tn + fp) / n)
    return dict(f1=(f1_pos + f1_neg) / 2, kappa=(po - pe) / (1 - pe), tpr=tp / (tp + fn),
                fpr=fp / (fp + tn), brier=np.mean((p - y) ** 2))


def test_auc_worked_example():
    assert roc_auc([0.9, 0.4, 0.5, 0.1], [1, 1, 0, 0]) == 0.75


def test_perfect_predictions():
    p = np.array([0.9, 0.8, 0.2, 0.1])
    y = np.array([1, 1, 0, 0])
    m = compute_metrics(p, y)
    assert (m.auc, m.f1_macro, m.kappa, m.tpr, m.fpr) == (1.0, 1.0, 1.0, 1.0, 0.0)
    assert m.brier == pytest.approx(np.mean((p - y) ** 2), abs=1e-15)


def test_constant_half_brier():
    m = compute_metrics(np.full(10, 0.5), np.array([0, 1] * 5))
    assert m.brier == 0.25 and m.auc == 0.5


def test_single_class_auc_undefined():
    with pytest.raises(DomainError):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.warns(UserWarning, match="single class"):
        m = compute_metrics(np.array([0.7, 0.2]), np.array([1, 1]))
    assert np.isnan(m.auc) and m.tpr == 0.5


@pytest.mark.parametrize("p,y", [
    ([0.9, 0.4, 0.5, 0.1], [1, 1, 0, 0]),
    ([0.7, 0.6, 0.55, 0.3, 0.2, 0.8], [1, 0, 1, 0, 0, 0]),
    ([0.51, 0.49, 0.5, 0.5, 0.9, 0.1, 0.6], [0, 1, 1, 0, 1, 0, 1]),
])
def test_metrics_match_hand_formulas(p, y):
    p, y = np.array(p), np.array(y)
    m = compute_metrics(p, y)
    h = hand_metrics(p, y)
    assert m.auc == pairwise_auc(p, y)
    for key, got in (("f1", m.f1_macro), ("kappa", m.kappa), ("tpr", m.tpr), ("fpr", m.fpr),
                     ("brier", m.brier)):
        assert got == pytest.approx(h[key], abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 200))
def test_auc_matches_pairwise_oracle(seed, n):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    s = rng.integers(0, 10, n) / 10.0  # heavy ties
    assert roc_auc(s, y) == pairwise_auc(s, y)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_auc_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, 50)
    y[:2] = [0, 1]
    s = rng.random(50)
    assert roc_auc(np.exp(3 * s) - 7, y) == roc_auc(s, y)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metric_ranges(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, 40)
    y[:2] = [0, 1]
    m = compute_metrics(rng.random(40), y)
    assert -1 <= m.kappa <= 1 and 0 <= m.brier <= 1 and 0 <= m.auc <= 1
    assert m.tp + m.fn == m.n_pos and m.fp + m.tn == m.n_neg


def test_kappa_zero_for_independent_predictor():
    rng = np.random.default_rng(0)
    kappas = [compute_metrics(rng.random(200), rng.integers(0, 2, 200)).kappa
              for _ in range(1000)]
    assert abs(np.mean(kappas)) < 0.05


def test_kmeans_single_block(rng):
    b = kmeans_blocks(rng.random((10, 2)), 1)
    assert set(b.block_of_watershed.values()) == {0}


def test_kmeans_separated_clouds(rng):
    a = rng.normal(0, 1, (20, 2))
    b = rng.normal(0, 1, (15, 2)) + 100.0
    blocks = kmeans_blocks(np.vstack([a, b]), 2, seed=5)
    labels = np.array([blocks.block_of_watershed[i] for i in range(35)])
    assert len(set(labels[:20])) == 1 and len(set(labels[20:])) == 1
    assert labels[0] != labels[-1]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8))
def test_kmeans_invariants(seed, k):
    rng = np.random.default_rng(seed)
    P = rng.random((30, 2)) * 1000
    b = kmeans_blocks(P, k, seed)
    h = np.array(b.inertia_history)
    assert np.all(np.diff(h) <= 1e-9 * max(h[0], 1.0))
    assert sorted(set(b.block_of_watershed.values())) == list(range(k))
    again = kmeans_blocks(P, k, seed)
    assert again.block_of_watershed == b.block_of_watershed


def test_kmeans_too_many_blocks(rng):
    with pytest.raises(ValueError):
        kmeans_blocks(rng.random((3, 2)), 4)


def test_kmeans_repairs_empty_cluster():
    # duplicated points force a farthest-first start onto an empty cluster
    P = np.array([[0.0, 0.0]] * 5 + [[10.0, 0.0]])
    b = kmeans_blocks(P, 3, seed=0)
    assert sorted(set(b.block_of_watershed.values())) == [0, 1, 2]


def table_at(xy, labels=None, features=None):
    n = len(xy)
    xy = np.asarray(xy, dtype=float)
    return SampleTable(xy[:, 0], xy[:, 1], np.zeros(n) if labels is None else labels,
                       np.full(n, 2020), np.zeros((n, 12)) if features is None else features)


def test_assign_point_at_centroid_and_ties():
    cents = np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0]])
    blocks = kmeans_blocks(cents, 3, seed=1)
    t = assign_blocks(table_at([[10.0, 0.0], [5.0, 0.0]]), cents, blocks)
    bw = blocks.block_of_watershed
    assert t.block_id[0] == bw[1]
    assert t.block_id[1] == bw[0]  # equidistant from watersheds 0 and 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_assign_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    cents = rng.random((12, 2)) * 100
    blocks = kmeans_blocks(cents, 4, seed)
    pts = rng.random((40, 2)) * 100
    t = assign_blocks(table_at(pts), cents, blocks)
    for i, (x, y) in enumerate(pts):
        best = min(range(12), key=lambda w: ((cents[w, 0] - x) ** 2 + (cents[w, 1] - y) ** 2, w))
        assert t.block_id[i] == blocks.block_of_watershed[best]


def cv_table(rng, n=300, k=5):
    labels = rng.integers(0, 2, n)
    feats = np.zeros((n, 12))
    feats[:, 0] = labels
    feats[:, 1:] = rng.normal(size=(n, 11))
    t = table_at(rng.random((n, 2)), labels, feats)
    t.block_id = np.arange(n) % k
    blocks = kmeans_blocks(rng.random((k, 2)), k)
    return t, blocks


def test_lobo_folds_partition(rng):
    t, blocks = cv_table(rng)
    res = lobo_cv(t, blocks, FeatureZeroModel())
    assert len(res.folds) == 5
    seen = []
    for f in res.folds:
        assert not set(f.train_idx) & set(f.test_idx)
        assert len(set(t.block_id[f.test_idx])) == 1
        seen.extend(f.test_idx)
    assert sorted(seen) == list(range(len(t)))
    assert np.all(res.aucs == 1.0)
    assert np.all(lobo_cv(t, blocks, ConstantModel()).aucs == 0.5)


def test_lobo_summary_uses_unweighted_mean_and_sample_sd():
    r = CVResult("x")
    from floodgraph.evaluation import FoldResult, MetricReport
    for i, a in enumerate([0.6, 0.8, 0.7]):
        m = MetricReport(a, 0, 0, 0, 0, 0, 0.5, 1, 1)
        r.folds.append(FoldResult(i, "x", m, np.arange(2), np.arange(1)))
    assert r.mean_auc == pytest.approx(0.7)
    assert r.sd_auc == pytest.approx(0.1)


def test_degenerate_fold_skipped(rng):
    t, blocks = cv_table(rng)
    t.label[t.block_id == 2] = 0
    t.features[t.block_id == 2, 0] = 0
    with pytest.warns(UserWarning, match="fold 2"):
        res = lobo_cv(t, blocks, FeatureZeroModel())
    assert res.skipped == [2] and len(res.folds) == 4
    t.label[:] = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(EvaluationError):
            lobo_cv(t, blocks, FeatureZeroModel())


def test_lobo_baselines_and_csv(tmp_path, rng):
    t, blocks = cv_table(rng, 200)
    cfg = TrainConfig(n_trees=5, max_depth=3, stacking_folds=3)
    res = lobo_cv_baselines(t, blocks, cfg)
    assert set(res) == {"logistic", "forest", "gbt", "stacking"}
    for r in res.values():
        assert len(r.folds) == 5 and r.mean_auc > 0.9
    write_metrics_csv(list(res.values()), tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "fold,model,auc,f1_macro,kappa,tpr,fpr,brier,n_train,n_test"
    assert len(lines) == 21
    again = lobo_cv_baselines(t, blocks, cfg)
    assert [r.mean_auc for r in again.values()] == [r.mean_auc for r in res.values()]


def test_lobo_graph_hygiene(rng):
    g = random_graph(rng, 30, p_edge=0.15)
    g.labels[:] = (g.features[:, 0] > 0).astype(int)
    blocks = kmeans_blocks(g.centroids, 3, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = lobo_cv_graph(g, blocks, TrainConfig(epochs=20, hidden=8))
    node_block = blocks.blocks_for(g.node_ids)
    for f in res.folds:
        assert not set(f.train_idx) & set(f.test_idx)
        assert len(set(node_block[f.test_idx])) == 1
    assert list(lobo_folds(node_block, 3))[0][0] == 0
