"""Directed sub-watershed graph with area-weighted node features.

Each node is one watershed of a :class:`~floodgraph.terrain.WatershedPartition`.
A downstream edge joins a watershed to the one receiving its outflow, and every
downstream edge has a reverse twin so messages can travel both ways.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConsistencyError, DimensionError
from .factors import FactorStack
from .raster import check_aligned
from .terrain import FlowModel, WatershedPartition

DOWNSTREAM, REVERSE = "downstream", "reverse"
NO_WATERSHED = -1


@dataclass
class BasinGraph:
    node_ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    areas: np.ndarray
    centroids: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    direction: np.ndarray
    feature_names: tuple = ()

    def __post_init__(self):
        self.node_ids = np.asarray(self.node_ids, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.areas = np.asarray(self.areas, dtype=np.float64)
        self.centroids = np.asarray(self.centroids, dtype=np.float64).reshape(-1, 2)
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.direction = np.asarray(self.direction, dtype=object)
        if self.features.shape[0] != self.node_ids.size:
            raise DimensionError("one feature row per node required")

    @property
    def n_nodes(self) -> int:
        return int(self.node_ids.size)

    def index(self) -> dict:
        return {int(n): i for i, n in enumerate(self.node_ids)}

    def edge_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Source and destination positions (not ids) of every edge."""
        pos = self.index()
        return (
            np.array([pos[s] for s in self.src], dtype=np.int64),
            np.array([pos[d] for d in self.dst], dtype=np.int64),
        )

    def aggregation_matrix(self, weighted: bool = True) -> np.ndarray:
        """Row-normalised ``(n, n)`` matrix averaging each node's in-neighbours."""
        n = self.n_nodes
        A = np.zeros((n, n))
        if self.src.size:
            s, d = self.edge_index()
            w = self.weight if weighted else np.ones_like(self.weight)
            np.add.at(A, (d, s), w)
        rowsum = A.sum(axis=1, keepdims=True)
        return np.divide(A, rowsum, out=np.zeros_like(A), where=rowsum > 0)

    def relabel(self, perm) -> "BasinGraph":
        """Graph with node ``i`` moved to position ``perm[i]`` and ids renumbered."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        pos = self.index()
        new_id = {int(nid): int(perm[pos[int(nid)]]) for nid in self.node_ids}
        return BasinGraph(
            node_ids=np.arange(self.n_nodes),
            features=self.features[inv],
            labels=self.labels[inv],
            areas=self.areas[inv],
            centroids=self.centroids[inv],
            src=[new_id[int(s)] for s in self.src],
            dst=[new_id[int(d)] for d in self.dst],
            weight=self.weight,
            direction=self.direction,
            feature_names=self.feature_names,
        )

    def downstream_edges(self):
        keep = self.direction == DOWNSTREAM
        return self.src[keep], self.dst[keep], self.weight[keep]


def _circular_mean_deg(values: np.ndarray, labels: np.ndarray, n: int) -> np.ndarray:
    rad = np.radians(values)
    s = np.bincount(labels, weights=np.sin(rad), minlength=n)
    c = np.bincount(labels, weights=np.cos(rad), minlength=n)
    return np.degrees(np.arctan2(s, c)) % 360.0


def point_watershed_lookup(partition: WatershedPartition, points) -> dict:
    """Watershed id of the cell containing each point (``NO_WATERSHED`` outside)."""
    labels = partition.labels
    xs = np.array([p.x for p in points], dtype=np.float64)
    ys = np.array([p.y for p in points], dtype=np.float64)
    row, col, inside = labels.cell_index(xs, ys)
    out = {}
    for i in range(len(points)):
        if inside[i] and labels.valid[row[i], col[i]]:
            out[i] = int(labels.values[row[i], col[i]])
        else:
            out[i] = NO_WATERSHED
    return out


def watershed_features(partition: WatershedPartition, stack: FactorStack) -> np.ndarray:
    """``(count, n_factors)`` per-watershed factor means (circular mean for aspect)."""
    check_aligned(partition.labels, stack.template)
    n = partition.count
    lab_valid = partition.labels.valid.ravel()
    labels = partition.labels.values.ravel().astype(np.int64)
    feats = np.empty((n, len(stack.names)))
    for j, (name, grid) in enumerate(zip(stack.names, stack.grids)):
        ok = lab_valid & grid.valid.ravel()
        lab = labels[ok]
        vals = grid.values.ravel()[ok]
        counts = np.bincount(lab, minlength=n)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            raise ConsistencyError(
                f"watershed {int(empty[0])} has no valid cells for factor {name!r}"
            )
        if name == "aspect":
            feats[:, j] = _circular_mean_deg(vals, lab, n)
        else:
            feats[:, j] = np.bincount(lab, weights=vals, minlength=n) / counts
    return feats


def build_graph(
    partition: WatershedPartition, stack: FactorStack, flow: FlowModel, floods
) -> BasinGraph:
    """Nodes, labels and area-ratio weighted edges for a watershed partition."""
    check_aligned(partition.labels, stack.template, flow.directions)
    n = partition.count
    lab_valid = partition.labels.valid.ravel()
    labels = partition.labels.values.ravel().astype(np.int64)
    feats = watershed_features(partition, stack)

    xs, ys = partition.labels.cell_centers()
    lab_all = labels[lab_valid]
    cnt = np.bincount(lab_all, minlength=n)
    cx = np.bincount(lab_all, weights=xs.ravel()[lab_valid], minlength=n) / cnt
    cy = np.bincount(lab_all, weights=ys.ravel()[lab_valid], minlength=n) / cnt

    node_label = np.zeros(n, dtype=np.int64)
    for ws in point_watershed_lookup(partition, list(floods)).values():
        if ws != NO_WATERSHED:
            node_label[ws] = 1

    edges = []
    for ws, down in partition.downstream.items():
        if down is None:
            continue
        ratio = partition.contributing_area_km2(flow, ws) / partition.contributing_area_km2(
            flow, down
        )
        w = min(max(ratio, np.finfo(float).tiny), 1.0)
        edges.append((ws, down, w, DOWNSTREAM))
        edges.append((down, ws, w, REVERSE))
    edges.sort(key=lambda e: (e[0], e[1]))

    return BasinGraph(
        node_ids=np.arange(n),
        features=feats,
        labels=node_label,
        areas=np.array([partition.areas[i] for i in range(n)]),
        centroids=np.column_stack([cx, cy]),
        src=[e[0] for e in edges],
        dst=[e[1] for e in edges],
        weight=[e[2] for e in edges],
        direction=[e[3] for e in edges],
        feature_names=tuple(stack.names),
    )


def write_graph_csv(graph: BasinGraph, nodes_path, edges_path) -> None:
    with Path(nodes_path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "area_km2", "label", *graph.feature_names])
        for i in range(graph.n_nodes):
            w.writerow(
                [int(graph.node_ids[i]), repr(float(graph.centroids[i, 0])),
                 repr(float(graph.centroids[i, 1])), repr(float(graph.areas[i])),
                 int(graph.labels[i])]
                + [repr(float(v)) for v in graph.features[i]]
            )
    with Path(edges_path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "weight", "direction"])
        for s, d, wt, dr in zip(graph.src, graph.dst, graph.weight, graph.direction):
            w.writerow([int(s), int(d), repr(float(wt)), dr])


def read_graph_csv(nodes_path, edges_path) -> BasinGraph:
    with Path(nodes_path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([r for r in reader], dtype=np.float64).reshape(-1, len(header))
    with Path(edges_path).open(newline="") as fh:
        edges = list(csv.DictReader(fh))
    return BasinGraph(
        node_ids=rows[:, 0].astype(np.int64),
        centroids=rows[:, 1:3],
        areas=rows[:, 3],
        labels=rows[:, 4].astype(np.int64),
        features=rows[:, 5:],
        src=[int(e["src"]) for e in edges],
        dst=[int(e["dst"]) for e in edges],
        weight=[float(e["weight"]) for e in edges],
        direction=[e["direction"] for e in edges],
        feature_names=tuple(header[5:]),
    )
