"""The 12-factor conditioning stack, per-point extraction and collinearity screening."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .exceptions import DimensionError
from .raster import Grid, check_aligned

FACTOR_NAMES = (
    "elevation",
    "slope",
    "aspect",
    "plan_curv",
    "prof_curv",
    "twi",
    "spi",
    "tri",
    "rainfall",
    "lulc",
    "soil_clay",
    "dist_river",
)
CATEGORICAL = frozenset({"lulc"})
RANK_TOL = 1e-10


@dataclass(frozen=True)
class FactorStack:
    names: tuple
    grids: tuple
    categorical: tuple

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("factor names must be unique")
        if len(self.names) != len(self.grids) or len(self.names) != len(self.categorical):
            raise DimensionError("one grid and one categorical flag per factor")
        check_aligned(*self.grids)

    @classmethod
    def from_mapping(cls, grids: dict, names=FACTOR_NAMES) -> "FactorStack":
        missing = [n for n in names if n not in grids]
        if missing:
            raise KeyError(f"missing factor grids: {missing}")
        return cls(
            tuple(names),
            tuple(grids[n] for n in names),
            tuple(n in CATEGORICAL for n in names),
        )

    def __getitem__(self, name: str) -> Grid:
        return self.grids[self.names.index(name)]

    @property
    def template(self) -> Grid:
        return self.grids[0]

    def valid(self) -> np.ndarray:
        ok = np.ones(self.template.shape, dtype=bool)
        for g in self.grids:
            ok &= g.valid
        return ok

    def cell_matrix(self, mask=None) -> tuple[np.ndarray, np.ndarray]:
        """Feature rows for every cell valid in all factors, plus their flat indices."""
        ok = self.valid() if mask is None else (self.valid() & mask)
        flat = np.flatnonzero(ok.ravel())
        X = np.column_stack([g.values.ravel()[flat] for g in self.grids])
        return X, flat


@dataclass
class SampleTable:
    """Point observations with their factor vectors.

    ``block_id`` and ``watershed_id`` hold -1 where unassigned.
    """

    x: np.ndarray
    y: np.ndarray
    label: np.ndarray
    year: np.ndarray
    features: np.ndarray
    names: tuple = FACTOR_NAMES
    block_id: np.ndarray | None = None
    watershed_id: np.ndarray | None = None
    dropped: int = 0

    def __post_init__(self):
        n = len(self.x)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.label = np.asarray(self.label, dtype=np.int64)
        self.year = np.asarray(self.year, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64).reshape(n, len(self.names))
        if self.block_id is None:
            self.block_id = np.full(n, -1, dtype=np.int64)
        if self.watershed_id is None:
            self.watershed_id = np.full(n, -1, dtype=np.int64)
        self.block_id = np.asarray(self.block_id, dtype=np.int64)
        self.watershed_id = np.asarray(self.watershed_id, dtype=np.int64)

    def __len__(self):
        return len(self.x)

    def subset(self, idx) -> "SampleTable":
        idx = np.asarray(idx)
        return replace(
            self,
            x=self.x[idx],
            y=self.y[idx],
            label=self.label[idx],
            year=self.year[idx],
            features=self.features[idx],
            block_id=self.block_id[idx],
            watershed_id=self.watershed_id[idx],
            dropped=0,
        )

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "label", "year", "block_id", "watershed_id", *self.names])
            for i in range(len(self)):
                w.writerow(
                    [repr(float(self.x[i])), repr(float(self.y[i])), int(self.label[i]),
                     int(self.year[i]), int(self.block_id[i]), int(self.watershed_id[i])]
                    + [repr(float(v)) for v in self.features[i]]
                )

    @classmethod
    def from_csv(cls, path) -> "SampleTable":
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader]
        names = tuple(header[6:])
        arr = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
        return cls(
            x=arr[:, 0], y=arr[:, 1], label=arr[:, 2], year=arr[:, 3],
            block_id=arr[:, 4], watershed_id=arr[:, 5], features=arr[:, 6:], names=names,
        )


def extract_features(stack: FactorStack, points) -> SampleTable:
    """Nearest-cell factor values per point; out-of-bounds or nodata rows are dropped."""
    xs = np.array([p.x for p in points], dtype=np.float64)
    ys = np.array([p.y for p in points], dtype=np.float64)
    row, col, inside = stack.template.cell_index(xs, ys)
    feats = np.column_stack([g.values[row, col] for g in stack.grids]) if len(points) else \
        np.empty((0, len(stack.names)))
    ok = inside.copy()
    for j, g in enumerate(stack.grids):
        ok &= g.valid[row, col]
    keep = np.flatnonzero(ok)
    return SampleTable(
        x=xs[keep],
        y=ys[keep],
        label=np.array([points[i].label for i in keep], dtype=np.int64),
        year=np.array([points[i].year for i in keep], dtype=np.int64),
        features=feats[keep],
        names=stack.names,
        dropped=len(points) - keep.size,
    )


def _continuous(table: SampleTable, categorical) -> list:
    return [j for j, n in enumerate(table.names) if n not in categorical]


def pearson_screen(table: SampleTable, threshold: float = 0.80, categorical=CATEGORICAL):
    """Unordered factor pairs with ``|r| > threshold`` as ``(name, name, r)``."""
    if len(table) < 3:
        raise ValueError("Pearson screening needs at least 3 rows")
    cols = _continuous(table, categorical)
    X = table.features[:, cols]
    Xc = X - X.mean(axis=0)
    ss = np.sqrt((Xc * Xc).sum(axis=0))
    zero_var = ss == 0
    for j in np.flatnonzero(zero_var):
        warnings.warn(f"zero-variance factor {table.names[cols[j]]!r}: correlations undefined")
    flagged = []
    for a in range(len(cols)):
        for b in range(a + 1, len(cols)):
            if zero_var[a] or zero_var[b]:
                continue
            r = float((Xc[:, a] @ Xc[:, b]) / (ss[a] * ss[b]))
            r = max(-1.0, min(1.0, r))
            if abs(r) > threshold:
                flagged.append((table.names[cols[a]], table.names[cols[b]], round(r, 6)))
    return flagged


def vif_screen(table: SampleTable, threshold: float = 10.0, categorical=CATEGORICAL):
    """Variance inflation factor of every continuous factor.

    Returns ``(vifs, flagged)`` where ``flagged`` lists factors above
    ``threshold``.  Perfect collinearity gives ``inf``.
    """
    cols = _continuous(table, categorical)
    X = table.features[:, cols]
    n, k = X.shape
    if n <= k + 1:
        raise ValueError(f"VIF needs more than {k + 1} rows, got {n}")
    vifs = {}
    for j in range(k):
        yj = X[:, j]
        sst = float(((yj - yj.mean()) ** 2).sum())
        name = table.names[cols[j]]
        if sst == 0:
            warnings.warn(f"zero-variance factor {name!r}: VIF undefined")
            vifs[name] = float("nan")
            continue
        A = np.column_stack([np.ones(n), np.delete(X, j, axis=1)])
        coef, *_ = np.linalg.lstsq(A, yj, rcond=None)
        resid = yj - A @ coef
        tol_ratio = float(resid @ resid) / sst
        vifs[name] = float("inf") if tol_ratio < RANK_TOL else 1.0 / tol_ratio
    flagged = [nm for nm, v in vifs.items() if v > threshold]
    return vifs, flagged
