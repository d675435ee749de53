"""Histogram-binned CART kernels compiled with numba.

Two split criteria share one builder: weighted Gini (``GINI``) for forest trees
and the second-order gradient gain (``NEWTON``) for boosting.  Trees are stored
as flat node arrays; ``feature == -1`` marks a leaf.  Prediction compares the
raw feature value with the stored threshold (``x <= threshold`` goes left).
"""
from __future__ import annotations

import numpy as np
from numba import njit

GINI = 0
NEWTON = 1


def make_thresholds(X: np.ndarray, max_bins: int):
    """Candidate split thresholds per feature, padded into a 2-D array."""
    d = X.shape[1]
    cands = []
    for j in range(d):
        uniq = np.unique(X[:, j])
        if uniq.size <= max_bins:
            t = (uniq[:-1] + uniq[1:]) / 2.0
        else:
            qs = np.quantile(X[:, j], np.linspace(0, 1, max_bins + 1)[1:-1])
            t = np.unique(qs)
        cands.append(t)
    width = max(1, max(c.size for c in cands))
    thr = np.full((d, width), np.inf)
    nthr = np.zeros(d, dtype=np.int64)
    for j, t in enumerate(cands):
        thr[j, : t.size] = t
        nthr[j] = t.size
    return thr, nthr


def bin_features(X: np.ndarray, thr: np.ndarray, nthr: np.ndarray) -> np.ndarray:
    Xb = np.empty(X.shape, dtype=np.int64)
    for j in range(X.shape[1]):
        Xb[:, j] = np.searchsorted(thr[j, : nthr[j]], X[:, j], side="left")
    return Xb


@njit(cache=True)
def _node_stats(idx, start, end, s1, s2):
    a = 0.0
    b = 0.0
    for t in range(start, end):
        i = idx[t]
        a += s1[i]
        b += s2[i]
    return a, b


@njit(cache=True)
def _score(a, b, mode, lam):
    # impurity-style score; larger is better for children
    if mode == 0:
        if b <= 0.0:
            return 0.0
        return (a * a + (b - a) * (b - a)) / b
    return a * a / (b + lam)


@njit(cache=True)
def build_tree(Xb, nthr, thr, s1, s2, idx, mode, max_depth, max_features, lam,
               min_child, seed, feature, threshold, left, right, value):
    """Grow one tree over ``idx`` into the preallocated node arrays.

    ``mode == GINI``: s1 = weighted positives, s2 = weights.
    ``mode == NEWTON``: s1 = gradients, s2 = hessians.
    Returns the number of nodes used.
    """
    np.random.seed(seed)
    d = Xb.shape[1]
    feats = np.arange(d)
    max_nb = 1
    for j in range(d):
        if nthr[j] + 1 > max_nb:
            max_nb = nthr[j] + 1
    h1 = np.zeros(max_nb)
    h2 = np.zeros(max_nb)
    hc = np.zeros(max_nb, dtype=np.int64)

    stack_start = np.empty(2 ** (max_depth + 1), dtype=np.int64)
    stack_end = np.empty_like(stack_start)
    stack_depth = np.empty_like(stack_start)
    stack_node = np.empty_like(stack_start)
    sp = 0
    stack_start[0] = 0
    stack_end[0] = idx.size
    stack_depth[0] = 0
    stack_node[0] = 0
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        start = stack_start[sp]
        end = stack_end[sp]
        depth = stack_depth[sp]
        node = stack_node[sp]
        a, b = _node_stats(idx, start, end, s1, s2)
        if mode == 0:
            value[node] = a / b if b > 0 else 0.0
        else:
            value[node] = -a / (b + lam)
        feature[node] = -1
        left[node] = -1
        right[node] = -1

        if depth >= max_depth or end - start < 2:
            continue
        if mode == 0 and (a <= 0.0 or a >= b):
            continue

        parent_score = _score(a, b, mode, lam)
        best_gain = 1e-12
        best_f = -1
        best_k = -1

        # partial Fisher-Yates draw of the candidate features
        for t in range(max_features):
            r = t + np.random.randint(d - t)
            tmp = feats[t]
            feats[t] = feats[r]
            feats[r] = tmp
        for t in range(max_features):
            f = feats[t]
            nb = nthr[f] + 1
            if nb < 2:
                continue
            for k in range(nb):
                h1[k] = 0.0
                h2[k] = 0.0
                hc[k] = 0
            for q in range(start, end):
                i = idx[q]
                bb = Xb[i, f]
                h1[bb] += s1[i]
                h2[bb] += s2[i]
                hc[bb] += 1
            la = 0.0
            lb = 0.0
            lc = 0
            n_total = end - start
            for k in range(nb - 1):
                la += h1[k]
                lb += h2[k]
                lc += hc[k]
                if lc == 0:
                    continue
                if lc == n_total:
                    break
                ra = a - la
                rb = b - lb
                if mode == 1 and (lb < min_child or rb < min_child):
                    continue
                if mode == 0 and (lb <= 0.0 or rb <= 0.0):
                    continue
                gain = _score(la, lb, mode, lam) + _score(ra, rb, mode, lam) - parent_score
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_k = k

        if best_f < 0:
            continue

        # in-place partition: bins <= best_k to the left
        lo = start
        hi = end - 1
        while lo <= hi:
            if Xb[idx[lo], best_f] <= best_k:
                lo += 1
            else:
                tmp = idx[lo]
                idx[lo] = idx[hi]
                idx[hi] = tmp
                hi -= 1
        mid = lo

        feature[node] = best_f
        threshold[node] = thr[best_f, best_k]
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode

        stack_start[sp] = mid
        stack_end[sp] = end
        stack_depth[sp] = depth + 1
        stack_node[sp] = rnode
        sp += 1
        stack_start[sp] = start
        stack_end[sp] = mid
        stack_depth[sp] = depth + 1
        stack_node[sp] = lnode
        sp += 1
    return n_nodes


@njit(cache=True)
def predict_sum(X, feature, threshold, left, right, value):
    """Sum of leaf values over all trees for every row of ``X``."""
    n = X.shape[0]
    T = feature.shape[0]
    out = np.zeros(n)
    for i in range(n):
        s = 0.0
        for t in range(T):
            node = 0
            while feature[t, node] >= 0:
                if X[i, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            s += value[t, node]
        out[i] = s
    return out


@njit(cache=True)
def coalition_sums(x, B, feature, threshold, left, right, value):
    """Tree-sum of the hybrid rows ``x_S + B[b]_{~S}`` for every coalition bitmask S.

    Returns ``(n_background, 2**d)``.  Per tree and background row, a walk that
    branches only where ``x`` and ``B[b]`` disagree reaches leaves whose
    (in, out) feature requirements partition the coalitions, so each
    coalition receives exactly one leaf value per tree, summed in tree order.
    """
    d = x.shape[0]
    nb = B.shape[0]
    T = feature.shape[0]
    full = (1 << d) - 1
    out = np.zeros((nb, 1 << d))
    m = feature.shape[1]
    st_node = np.empty(m + 1, dtype=np.int64)
    st_in = np.empty(m + 1, dtype=np.int64)
    st_out = np.empty(m + 1, dtype=np.int64)
    for b in range(nb):
        row = out[b]
        for t in range(T):
            sp = 0
            st_node[0] = 0
            st_in[0] = 0
            st_out[0] = 0
            sp = 1
            while sp > 0:
                sp -= 1
                node = st_node[sp]
                mi = st_in[sp]
                mo = st_out[sp]
                while feature[t, node] >= 0:
                    f = feature[t, node]
                    bit = 1 << f
                    xl = x[f] <= threshold[t, node]
                    bl = B[b, f] <= threshold[t, node]
                    if xl == bl or (mi & bit) != 0:
                        node = left[t, node] if xl else right[t, node]
                    elif (mo & bit) != 0:
                        node = left[t, node] if bl else right[t, node]
                    else:
                        # background branch deferred, sample branch followed now
                        st_node[sp] = left[t, node] if bl else right[t, node]
                        st_in[sp] = mi
                        st_out[sp] = mo | bit
                        sp += 1
                        mi = mi | bit
                        node = left[t, node] if xl else right[t, node]
                v = value[t, node]
                free = full & ~(mi | mo)
                sub = free
                while True:
                    row[mi | sub] += v
                    if sub == 0:
                        break
                    sub = (sub - 1) & free
    return out
