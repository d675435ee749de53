"""Shared constructors and brute-force oracles for the test suite."""
import numpy as np

from floodgraph.raster import Grid

# D8 offsets (dr, dc) in the documented tie-break order E, SE, S, SW, W, NW, N, NE
OFFSETS = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)]


def make_grid(values, cellsize=1.0, xll=0.0, yll=0.0, nodata=-9999.0):
    return Grid(np.asarray(values, dtype=float), xll, yll, cellsize, nodata)


def plane(rows, cols, a, b, c=100.0, cellsize=1.0):
    """z = a*x + b*y + c with x east and y north, sampled at cell centres."""
    g = make_grid(np.zeros((rows, cols)), cellsize)
    x, y = g.cell_centers()
    return make_grid(a * x + b * y + c, cellsize)


def brute_distance(mask, cellsize=1.0):
    """Nearest-target distance by scanning every target for every cell."""
    tr, tc = np.nonzero(mask)
    out = np.empty(mask.shape)
    for r in range(mask.shape[0]):
        for c in range(mask.shape[1]):
            out[r, c] = np.sqrt(((tr - r) ** 2 + (tc - c) ** 2).min()) * cellsize
    return out


def erode(m):
    p = np.pad(m, 1, constant_values=False)
    out = np.ones_like(m)
    for dr in range(3):
        for dc in range(3):
            out &= p[dr:dr + m.shape[0], dc:dc + m.shape[1]]
    return out


def dilate(m):
    p = np.pad(m, 1, constant_values=False)
    out = np.zeros_like(m)
    for dr in range(3):
        for dc in range(3):
            out |= p[dr:dr + m.shape[0], dc:dc + m.shape[1]]
    return out


def path_count_accumulation(receiver, valid):
    """For every cell, count the cells whose downstream path passes through it."""
    acc = np.zeros(receiver.size, dtype=np.int64)
    for start in np.flatnonzero(valid.ravel()):
        c, steps = start, 0
        while c >= 0:
            acc[c] += 1
            c = receiver[c]
            steps += 1
            assert steps <= receiver.size, "cycle in flow directions"
    return acc.reshape(valid.shape)


def pairwise_auc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else (0.5 if p == n else 0.0)
    return wins / (len(pos) * len(neg))


def y_junction_dem():
    chan_elev = {(8, 4): 0, (7, 4): 1, (6, 4): 2, (5, 4): 3, (4, 4): 4,
                 (3, 3): 5, (2, 2): 6, (1, 1): 7, (3, 5): 5, (2, 6): 6, (1, 7): 7}
    chan = np.zeros((9, 9), dtype=bool)
    for rc in chan_elev:
        chan[rc] = True
    z = np.empty((9, 9))
    for r in range(9):
        for c in range(9):
            if chan[r, c]:
                z[r, c] = chan_elev[(r, c)]
            else:
                cheb = min(max(abs(r - a), abs(c - b)) for a, b in chan_elev)
                z[r, c] = 10 + 10 * cheb + (8 - r)
    return make_grid(z, 100.0), chan


def segment_oracle(receiver, is_channel):
    """Segment head per channel cell by walking upstream through 1-inflow cells."""
    n = receiver.size
    preds = [[] for _ in range(n)]
    for c in np.flatnonzero(is_channel):
        t = receiver[c]
        if t >= 0 and is_channel[t]:
            preds[t].append(c)

    def head(c):
        while len(preds[c]) == 1:
            c = preds[c][0]
        return c

    labels = np.full(n, -1)
    for c in range(n):
        d = c
        while not is_channel[d]:
            d = receiver[d]
        labels[c] = head(d)
    return labels


def same_partition(a, b):
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


def random_graph(rng, n, d=12, p_edge=0.3, labels=None):
    """Random BasinGraph with a forward/reverse twin for every sampled edge."""
    from floodgraph.graph import DOWNSTREAM, REVERSE, BasinGraph

    edges = []
    for s in range(n):
        for t in range(s + 1, n):
            if rng.random() < p_edge:
                w = float(rng.uniform(0.05, 1.0))
                edges += [(s, t, w, DOWNSTREAM), (t, s, w, REVERSE)]
    edges.sort(key=lambda e: (e[0], e[1]))
    if labels is None:
        labels = np.zeros(n, dtype=int)
        labels[rng.choice(n, max(1, n // 3), replace=False)] = 1
    return BasinGraph(
        node_ids=np.arange(n), features=rng.normal(size=(n, d)), labels=labels,
        areas=np.ones(n), centroids=rng.uniform(0, 1000, (n, 2)),
        src=[e[0] for e in edges], dst=[e[1] for e in edges],
        weight=[e[2] for e in edges], direction=[e[3] for e in edges],
    )


def walk_tree(x, feature, threshold, left, right, value):
    node = 0
    while feature[node] >= 0:
        node = left[node] if x[feature[node]] <= threshold[node] else right[node]
    return value[node], node
