"""Susceptibility classes, decision tiers, zone areas and asset exposure."""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DomainError
from .raster import Grid, check_aligned

CLASS_BOUNDS = (0.30, 0.50, 0.70)
CLASS_NAMES = {1: "low", 2: "moderate", 3: "high", 4: "very_high"}
LOW, MODERATE, HIGH, VERY_HIGH = 1, 2, 3, 4
TIER_NAMES = {1: "P1", 2: "P2", 3: "P3", 4: "P4"}
NARROW_WIDTH = 0.15
ASSET_CATEGORIES = ("road", "bridge", "hydro", "settlement", "tourist")


def classify_values(p, bounds=CLASS_BOUNDS) -> np.ndarray:
    """Class codes 1..4 for probabilities; each class includes its lower bound."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p < 0) | (p > 1) | ~np.isfinite(p)):
        raise DomainError("susceptibility values must lie in [0, 1]")
    return np.searchsorted(bounds, p, side="right") + 1


def classify(susceptibility: Grid, bounds=CLASS_BOUNDS) -> Grid:
    ok = susceptibility.valid
    codes = np.zeros(susceptibility.shape)
    codes[ok] = classify_values(susceptibility.values[ok], bounds)
    return susceptibility.masked(codes, ok)


def tier_values(classes, width, narrow: float = NARROW_WIDTH) -> np.ndarray:
    classes = np.asarray(classes)
    width = np.asarray(width, dtype=np.float64)
    return np.select(
        [(classes == VERY_HIGH) & (width < narrow), classes == HIGH, classes == VERY_HIGH],
        [1, 2, 3],
        default=4,
    )


def decision_tiers(class_map: Grid, width_map: Grid, narrow: float = NARROW_WIDTH) -> Grid:
    """P1..P4 as codes 1..4 from class and conformal interval width."""
    check_aligned(class_map, width_map)
    ok = class_map.valid & width_map.valid
    return class_map.masked(tier_values(class_map.values, width_map.values, narrow), ok)


def zone_area_summary(class_map: Grid) -> dict:
    """Area (km2) and share of the valid domain per susceptibility class."""
    ok = class_map.valid
    codes = class_map.values[ok].astype(np.int64)
    counts = np.bincount(codes, minlength=5)
    total = int(ok.sum())
    km2 = class_map.cell_area / 1e6
    out = {}
    for code, name in CLASS_NAMES.items():
        n = int(counts[code])
        out[name] = {
            "cells": n,
            "area_km2": n * km2,
            "percent": 100.0 * n / total if total else 0.0,
        }
    return out


@dataclass(frozen=True)
class Asset:
    category: str
    name: str
    geometry: tuple

    def __post_init__(self):
        if self.category not in ASSET_CATEGORIES:
            raise ValueError(f"unknown asset category {self.category!r}")
        pts = tuple((float(x), float(y)) for x, y in self.geometry)
        if not pts:
            raise ValueError(f"asset {self.name!r} has no coordinates")
        if len(pts) > 1 and self.category != "road":
            raise ValueError(f"only roads may be polylines, got {self.category!r}")
        object.__setattr__(self, "geometry", pts)

    @property
    def is_line(self) -> bool:
        return len(self.geometry) > 1

    def wkt(self) -> str:
        coords = ", ".join(f"{x:.6g} {y:.6g}" for x, y in self.geometry)
        return f"LINESTRING({coords})" if self.is_line else f"POINT({coords})"

    @property
    def length_m(self) -> float:
        g = np.asarray(self.geometry)
        return float(np.hypot(*np.diff(g, axis=0).T).sum()) if self.is_line else 0.0


_GEOM = re.compile(r"^\s*(POINT|LINESTRING)\s*\((.*)\)\s*$", re.IGNORECASE)


def parse_geometry(text: str) -> tuple:
    m = _GEOM.match(text)
    if not m:
        raise ValueError(f"unparseable geometry {text!r}")
    pts = []
    for pair in m.group(2).split(","):
        xy = pair.split()
        if len(xy) != 2:
            raise ValueError(f"bad coordinate pair {pair!r} in {text!r}")
        pts.append((float(xy[0]), float(xy[1])))
    if m.group(1).upper() == "POINT" and len(pts) != 1:
        raise ValueError(f"POINT needs one coordinate pair: {text!r}")
    if m.group(1).upper() == "LINESTRING" and len(pts) < 2:
        raise ValueError(f"LINESTRING needs at least two pairs: {text!r}")
    return tuple(pts)


def read_assets_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        return [
            Asset(row["category"], row["name"], parse_geometry(row["wkt_like_geometry"]))
            for row in csv.DictReader(fh)
        ]


def write_assets_csv(assets, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category", "name", "wkt_like_geometry"])
        for a in assets:
            w.writerow([a.category, a.name, a.wkt()])


def _exposed(class_map: Grid, x, y) -> np.ndarray:
    r, c, inside = class_map.cell_index(x, y)
    ok = inside & class_map.valid[r, c]
    return ok & (class_map.values[r, c] >= HIGH)


def polyline_exposure(vertices, class_map: Grid, step: float | None = None) -> tuple:
    """(total, exposed) length in metres, sampling each segment at ``step`` spacing.

    Every segment is cut into equal pieces no longer than ``step`` (default
    half a cell); a piece counts as exposed when its midpoint falls in a High
    or Very High cell.
    """
    step = class_map.cellsize / 2 if step is None else step
    g = np.asarray(vertices, dtype=np.float64)
    total = exposed = 0.0
    for (x0, y0), (x1, y1) in zip(g[:-1], g[1:]):
        seg = math.hypot(x1 - x0, y1 - y0)
        if seg == 0:
            continue
        n = max(1, math.ceil(seg / step))
        t = (np.arange(n) + 0.5) / n
        hit = _exposed(class_map, x0 + t * (x1 - x0), y0 + t * (y1 - y0))
        total += seg
        exposed += hit.sum() * seg / n
    return total, exposed


def exposure_overlay(assets, class_map: Grid, step: float | None = None) -> dict:
    """Per-category counts (points) or kilometres (roads) in High or Very High cells."""
    report = {}
    for a in assets:
        entry = report.setdefault(a.category, {"n_assets": 0, "exposed_count": 0})
        entry["n_assets"] += 1
        if a.is_line:
            total, exp = polyline_exposure(a.geometry, class_map, step)
            entry["length_km"] = entry.get("length_km", 0.0) + total / 1000
            entry["exposed_km"] = entry.get("exposed_km", 0.0) + exp / 1000
            entry["exposed_count"] += int(exp > 0)
        else:
            x, y = a.geometry[0]
            entry["exposed_count"] += int(_exposed(class_map, [x], [y])[0])
    return report


def write_pgm(grid: Grid, path, vmin: float | None = None, vmax: float | None = None) -> None:
    """Binary 8-bit PGM heatmap; nodata renders black, data spans grey levels 1..255."""
    ok = grid.valid
    vals = grid.values
    if vmin is None:
        vmin = float(vals[ok].min()) if ok.any() else 0.0
    if vmax is None:
        vmax = float(vals[ok].max()) if ok.any() else 1.0
    span = vmax - vmin if vmax > vmin else 1.0
    scaled = np.clip((vals - vmin) / span, 0, 1)
    pix = np.where(ok, 1 + np.round(scaled * 254), 0).astype(np.uint8)
    header = f"P5\n{grid.ncols} {grid.nrows}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pix.tobytes())
