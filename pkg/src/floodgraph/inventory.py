"""Flood / non-flood point inventories.

Change detection on calibrated backscatter (dB) rasters, seeded point sampling
with an exclusion buffer, and the train/test split by event year.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import CapacityError, DomainError
from .raster import Grid, binary, binary_open, check_aligned

FLOOD, NONFLOOD = 1, 0
SOURCES = ("sar", "supplied")


@dataclass(frozen=True)
class SamplePoint:
    x: float
    y: float
    label: int
    year: int
    source: str = "sar"


@dataclass
class Inventory:
    points: list = field(default_factory=list)
    ratio: int = 5
    buffer_m: float = 1000.0

    @property
    def floods(self) -> list:
        return [p for p in self.points if p.label == FLOOD]

    @property
    def nonfloods(self) -> list:
        return [p for p in self.points if p.label == NONFLOOD]

    def __len__(self):
        return len(self.points)


class TemporalSplit(NamedTuple):
    train: Inventory
    test: Inventory
    dropped: int


def detect_change(
    reference_db: Grid,
    monsoon_db: Grid,
    permanent_water: Grid,
    slope: Grid,
    dist_channel: Grid,
    threshold_db: float = -3.0,
    max_slope_deg: float = 15.0,
    max_dist_m: float = 2000.0,
    open_result: bool = True,
) -> Grid:
    """Flag cells whose backscatter dropped by at least ``-threshold_db`` dB.

    Permanent water, steep cells and cells far from channels are excluded
    before the 3x3 opening removes isolated pixels.
    """
    check_aligned(reference_db, monsoon_db, permanent_water, slope, dist_channel)
    if not threshold_db < 0:
        raise DomainError(f"change threshold must be negative, got {threshold_db}")
    valid = reference_db.valid & monsoon_db.valid
    diff = monsoon_db.values - reference_db.values
    flagged = (
        valid
        & (diff <= threshold_db)
        & ~binary(permanent_water)
        & slope.valid
        & (slope.values < max_slope_deg)
        & dist_channel.valid
        & (dist_channel.values <= max_dist_m)
    )
    mask = reference_db.masked(flagged.astype(np.float64), valid)
    return binary_open(mask) if open_result else mask


def sample_flood_points(mask: Grid, per_year_cap: int, year: int, seed: int) -> list:
    """Up to ``per_year_cap`` flagged cell centres, drawn without replacement."""
    if per_year_cap < 1:
        raise DomainError("per_year_cap must be at least 1")
    cells = np.flatnonzero(binary(mask).ravel())
    if cells.size == 0:
        return []
    rng = np.random.default_rng(seed)
    k = min(per_year_cap, cells.size)
    chosen = np.sort(rng.choice(cells, size=k, replace=False))
    return _points_at(mask, chosen, FLOOD, [year] * k)


def _points_at(grid: Grid, flat_cells, label: int, years) -> list:
    rows, cols = np.divmod(np.asarray(flat_cells), grid.ncols)
    out = []
    for r, c, yr in zip(rows, cols, years):
        x, y = grid.cell_center(int(r), int(c))
        out.append(SamplePoint(x, y, label, int(yr), "sar"))
    return out


def sample_nonflood(
    domain: Grid, floods: list, ratio: int, buffer_m: float, seed: int
) -> list:
    """``ratio`` non-flood points per flood point, at least ``buffer_m`` from every flood.

    Non-flood points inherit event years from the flood points in order, so a
    later temporal split keeps the ratio within each period.
    """
    need = ratio * len(floods)
    if need == 0:
        return []
    eligible = binary(domain).ravel()
    if floods:
        xs, ys = domain.cell_centers()
        tree = cKDTree(np.array([[p.x, p.y] for p in floods]))
        dist, _ = tree.query(np.column_stack([xs.ravel(), ys.ravel()]))
        eligible &= dist >= buffer_m
    cells = np.flatnonzero(eligible)
    if cells.size < need:
        raise CapacityError(
            f"need {need} non-flood cells at >= {buffer_m} m from floods, "
            f"only {cells.size} eligible (shortfall {need - cells.size})"
        )
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(cells, size=need, replace=False))
    years = np.repeat([p.year for p in floods], ratio)
    rng.shuffle(years)
    return _points_at(domain, chosen, NONFLOOD, years)


def split_temporal(inv: Inventory, train_years, test_years) -> TemporalSplit:
    """Partition points by inclusive year ranges; others are dropped and counted.

    ``test_years`` may be ``None`` for an empty test period.
    """
    lo, hi = train_years
    if test_years is not None:
        tlo, thi = test_years
        if tlo <= hi and lo <= thi:
            raise ValueError(f"year ranges overlap: {train_years} and {test_years}")
    train, test, dropped = [], [], 0
    for p in inv.points:
        if lo <= p.year <= hi:
            train.append(p)
        elif test_years is not None and tlo <= p.year <= thi:
            test.append(p)
        else:
            dropped += 1
    return TemporalSplit(
        Inventory(train, inv.ratio, inv.buffer_m),
        Inventory(test, inv.ratio, inv.buffer_m),
        dropped,
    )


def write_points_csv(points, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "label", "year", "source"])
        for p in points:
            w.writerow([repr(float(p.x)), repr(float(p.y)), p.label, p.year, p.source])


def read_points_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        return [
            SamplePoint(float(r["x"]), float(r["y"]), int(r["label"]), int(r["year"]),
                        r.get("source") or "supplied")
            for r in csv.DictReader(fh)
        ]
