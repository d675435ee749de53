"""DEM derivatives, D8 flow routing, channel extraction and sub-watershed delineation.

Conventions
-----------
* Rows run north to south; the y axis (northing) points up.
* Slope/aspect use the 3x3 Horn stencil.  Aspect is the compass bearing of the
  downslope direction (0 = north, clockwise); flat cells have no aspect.
* Curvatures come from the Zevenbergen-Thorne quadratic fit.  Plan curvature is
  positive where flow converges, profile curvature positive on convex-up
  (accelerating) slopes.  Units are 1/m.
* D8 codes: E=1, SE=2, S=4, SW=8, W=16, NW=32, N=64, NE=128, outlet=0.  Ties in
  steepest descent are broken in that order.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConsistencyError, DimensionError, DomainError
from .raster import Grid, binary, check_aligned, euclidean_distance

SLOPE_FLOOR = 1e-6

# (drow, dcol, code) in tie-break order
D8_NEIGHBORS = (
    (0, 1, 1),
    (1, 1, 2),
    (1, 0, 4),
    (1, -1, 8),
    (0, -1, 16),
    (-1, -1, 32),
    (-1, 0, 64),
    (-1, 1, 128),
)
D8_CODES = tuple(code for _, _, code in D8_NEIGHBORS)
_CODE_TO_OFFSET = {code: (dr, dc) for dr, dc, code in D8_NEIGHBORS}


@dataclass(frozen=True)
class TerrainDerivatives:
    slope: Grid
    aspect: Grid
    plan_curv: Grid
    prof_curv: Grid
    tri: Grid


@dataclass(frozen=True)
class FlowModel:
    """D8 flow directions and accumulation over a depression-filled DEM.

    ``receiver`` holds, for every cell in row-major order, the flat index of the
    cell it drains to (-1 for outlets and nodata).  ``order`` lists valid cells
    from downstream to upstream.
    """

    directions: Grid
    accumulation: Grid
    specific_area: Grid
    filled: Grid
    receiver: np.ndarray
    order: np.ndarray

    @property
    def cellsize(self) -> float:
        return self.directions.cellsize


@dataclass(frozen=True)
class WatershedPartition:
    labels: Grid
    count: int
    areas: dict
    downstream: dict
    outlets: dict

    def contributing_area_km2(self, flow: FlowModel, ws: int) -> float:
        """Total upstream area draining through the outlet of ``ws``."""
        acc = flow.accumulation.values.ravel()[self.outlets[ws]]
        return acc * flow.directions.cell_area / 1e6


def _windows(values: np.ndarray, valid: np.ndarray):
    """3x3 neighbourhood arrays a..i for interior cells plus an interior-valid mask."""
    a = values[:-2, :-2]
    b = values[:-2, 1:-1]
    c = values[:-2, 2:]
    d = values[1:-1, :-2]
    e = values[1:-1, 1:-1]
    f = values[1:-1, 2:]
    g = values[2:, :-2]
    h = values[2:, 1:-1]
    i = values[2:, 2:]
    ok = np.ones_like(e, dtype=bool)
    for dr in range(3):
        for dc in range(3):
            ok &= valid[dr : dr + e.shape[0], dc : dc + e.shape[1]]
    return (a, b, c, d, e, f, g, h, i), ok


def _interior(dem: Grid, inner: np.ndarray, ok: np.ndarray) -> Grid:
    full = np.full(dem.shape, dem.nodata)
    full[1:-1, 1:-1] = np.where(ok, inner, dem.nodata)
    return dem.like(full)


def derive_terrain(dem: Grid) -> TerrainDerivatives:
    """Slope (deg), aspect (deg), plan/profile curvature (1/m) and TRI (m)."""
    if dem.nrows < 3 or dem.ncols < 3:
        raise DimensionError(f"terrain derivatives need at least 3x3 cells, got {dem.shape}")
    z = np.where(dem.valid, dem.values, 0.0)
    (a, b, c, d, e, f, g, h, i), ok = _windows(z, dem.valid)
    L = dem.cellsize

    dzdx = ((c + 2 * f + i) - (a + 2 * d + g)) / (8 * L)
    dzdy = ((a + 2 * b + c) - (g + 2 * h + i)) / (8 * L)
    grad = np.hypot(dzdx, dzdy)
    slope = np.degrees(np.arctan(grad))

    flat = grad == 0
    aspect = np.degrees(np.arctan2(-dzdx, -dzdy)) % 360.0
    aspect = np.where(aspect >= 360.0, 0.0, aspect)

    # Zevenbergen-Thorne coefficients
    D = ((d + f) / 2 - e) / L**2
    E = ((b + h) / 2 - e) / L**2
    F = (-a + c + g - i) / (4 * L**2)
    G = (f - d) / (2 * L)
    H = (b - h) / (2 * L)
    gh2 = G * G + H * H
    with np.errstate(invalid="ignore", divide="ignore"):
        plan = np.where(gh2 > 0, 2 * (D * H * H + E * G * G - F * G * H) / gh2, 0.0)
        prof = np.where(gh2 > 0, -2 * (D * G * G + E * H * H + F * G * H) / gh2, 0.0)

    tri = (
        np.abs(e - a) + np.abs(e - b) + np.abs(e - c) + np.abs(e - d)
        + np.abs(e - f) + np.abs(e - g) + np.abs(e - h) + np.abs(e - i)
    ) / 8.0

    return TerrainDerivatives(
        slope=_interior(dem, slope, ok),
        aspect=_interior(dem, aspect, ok & ~flat),
        plan_curv=_interior(dem, plan, ok),
        prof_curv=_interior(dem, prof, ok),
        tri=_interior(dem, tri, ok),
    )


def _priority_flood(z: np.ndarray, valid: np.ndarray):
    """Fill depressions; return filled elevations, PF parents and pop order."""
    nrows, ncols = z.shape
    filled = z.copy()
    parent = np.full(z.size, -1, dtype=np.int64)
    visited = ~valid.copy()
    heap = []
    counter = 0

    padded = np.pad(valid, 1, constant_values=False)
    all_nbrs_valid = np.ones_like(valid)
    for dr, dc, _ in D8_NEIGHBORS:
        all_nbrs_valid &= padded[1 + dr : 1 + dr + nrows, 1 + dc : 1 + dc + ncols]
    seeds = valid & ~all_nbrs_valid
    for flat in np.flatnonzero(seeds.ravel()):
        r, c = divmod(int(flat), ncols)
        heapq.heappush(heap, (z[r, c], counter, r, c))
        counter += 1
        visited[r, c] = True

    order = []
    while heap:
        zc, _, r, c = heapq.heappop(heap)
        order.append(r * ncols + c)
        for dr, dc, _ in D8_NEIGHBORS:
            rn, cn = r + dr, c + dc
            if 0 <= rn < nrows and 0 <= cn < ncols and not visited[rn, cn]:
                visited[rn, cn] = True
                if filled[rn, cn] < zc:
                    filled[rn, cn] = zc
                parent[rn * ncols + cn] = r * ncols + c
                heapq.heappush(heap, (filled[rn, cn], counter, rn, cn))
                counter += 1
    return filled, parent, np.asarray(order, dtype=np.int64)


def d8_flow(dem: Grid) -> FlowModel:
    """Depression-fill ``dem`` and route flow by D8 steepest descent."""
    valid = dem.valid
    if not valid.any():
        raise DomainError("DEM has no valid cells")
    nrows, ncols = dem.shape
    z = np.where(valid, dem.values, np.inf)
    filled, parent, order = _priority_flood(z, valid)

    # steepest positive distance-weighted drop; first max wins ties
    padded = np.pad(filled, 1, constant_values=np.inf)
    drops = np.empty((8, nrows, ncols))
    for k, (dr, dc, _) in enumerate(D8_NEIGHBORS):
        nbr = padded[1 + dr : 1 + dr + nrows, 1 + dc : 1 + dc + ncols]
        dist = math.sqrt(2.0) if dr and dc else 1.0
        with np.errstate(invalid="ignore"):
            drops[k] = (filled - nbr) / dist
    drops[~np.isfinite(drops)] = -np.inf
    best = np.argmax(drops, axis=0)
    best_drop = np.take_along_axis(drops, best[None], axis=0)[0]

    flat_idx = np.arange(nrows * ncols).reshape(nrows, ncols)
    dr_arr = np.array([n[0] for n in D8_NEIGHBORS])
    dc_arr = np.array([n[1] for n in D8_NEIGHBORS])
    code_arr = np.array(D8_CODES)
    rr, cc = np.indices((nrows, ncols))
    receiver = np.where(
        best_drop > 0, (rr + dr_arr[best]) * ncols + (cc + dc_arr[best]), -1
    ).ravel()
    codes = np.where(best_drop > 0, code_arr[best], 0).ravel()

    # flats resolved along the priority-flood tree
    flat_cells = (receiver < 0) & (parent >= 0) & valid.ravel()
    receiver[flat_cells] = parent[flat_cells]
    pr, pc = np.divmod(parent[flat_cells], ncols)
    fr, fc = np.divmod(flat_idx.ravel()[flat_cells], ncols)
    offset_code = {(dr, dc): code for dr, dc, code in D8_NEIGHBORS}
    codes[flat_cells] = [offset_code[(int(a), int(b))] for a, b in zip(pr - fr, pc - fc)]
    receiver[~valid.ravel()] = -1

    acc = np.where(valid.ravel(), 1.0, 0.0)
    for cell in order[::-1]:
        tgt = receiver[cell]
        if tgt >= 0:
            acc[tgt] += acc[cell]

    accumulation = dem.masked(acc.reshape(nrows, ncols), valid)
    directions = dem.masked(codes.reshape(nrows, ncols).astype(np.float64), valid)
    specific = dem.masked(acc.reshape(nrows, ncols) * dem.cellsize, valid)
    return FlowModel(
        directions=directions,
        accumulation=accumulation,
        specific_area=specific,
        filled=dem.masked(filled, valid),
        receiver=receiver,
        order=order,
    )


def receivers_from_directions(directions: Grid) -> np.ndarray:
    """Flat receiver index per cell decoded from a D8 code grid (-1 = none)."""
    nrows, ncols = directions.shape
    rec = np.full(nrows * ncols, -1, dtype=np.int64)
    codes = directions.values.ravel()
    valid = directions.valid.ravel()
    for flat in np.flatnonzero(valid):
        code = int(codes[flat])
        if code == 0:
            continue
        dr, dc = _CODE_TO_OFFSET[code]
        r, c = divmod(int(flat), ncols)
        rn, cn = r + dr, c + dc
        if 0 <= rn < nrows and 0 <= cn < ncols:
            rec[flat] = rn * ncols + cn
    return rec


def topological_order(receiver: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Kahn ordering from headwaters to outlets; raises if the graph has a cycle."""
    valid = valid.ravel()
    indeg = np.zeros(receiver.size, dtype=np.int64)
    has = receiver >= 0
    np.add.at(indeg, receiver[has], 1)
    stack = [int(i) for i in np.flatnonzero(valid & (indeg == 0))]
    out = []
    while stack:
        cell = stack.pop()
        out.append(cell)
        tgt = receiver[cell]
        if tgt >= 0:
            indeg[tgt] -= 1
            if indeg[tgt] == 0:
                stack.append(int(tgt))
    if len(out) != int(valid.sum()):
        raise ConsistencyError("flow direction graph contains a cycle")
    return np.asarray(out, dtype=np.int64)


def wetness_indices(flow: FlowModel, terrain: TerrainDerivatives) -> tuple[Grid, Grid]:
    """Topographic wetness index and stream power index."""
    check_aligned(flow.specific_area, terrain.slope)
    valid = flow.specific_area.valid & terrain.slope.valid
    a_s = flow.specific_area.values
    tan_b = np.tan(np.radians(np.where(valid, terrain.slope.values, 0.0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        twi = np.log(a_s / np.maximum(tan_b, SLOPE_FLOOR))
    spi = a_s * tan_b
    return flow.specific_area.masked(twi, valid), flow.specific_area.masked(spi, valid)


def extract_channels(flow: FlowModel, min_area_km2: float) -> Grid:
    """Cells whose contributing area reaches ``min_area_km2``."""
    if min_area_km2 < 0:
        raise DomainError(f"channel threshold must be non-negative, got {min_area_km2}")
    acc = flow.accumulation
    area_m2 = np.where(acc.valid, acc.values, 0.0) * acc.cell_area
    channel = acc.valid & (area_m2 >= min_area_km2 * 1e6)
    if not channel.any():
        total = acc.valid.sum() * acc.cell_area / 1e6
        raise DomainError(
            f"no channel cells: threshold {min_area_km2} km2 exceeds domain area {total:g} km2"
        )
    return acc.masked(channel.astype(np.float64), acc.valid)


def delineate_watersheds(flow: FlowModel, channels: Grid) -> WatershedPartition:
    """Split the channel network at junctions and label every cell by segment."""
    check_aligned(flow.directions, channels)
    is_channel = binary(channels).ravel()
    if not is_channel.any():
        raise DomainError("channel mask is empty")
    valid = flow.directions.valid.ravel()
    receiver = flow.receiver
    n = receiver.size

    inflow = np.zeros(n, dtype=np.int64)
    src = np.flatnonzero(is_channel & (receiver >= 0))
    tgt = receiver[src]
    np.add.at(inflow, tgt[is_channel[tgt]], 1)

    starts = np.flatnonzero(is_channel & (inflow != 1))
    seg = np.full(n, -1, dtype=np.int64)
    seg[starts] = np.arange(starts.size)
    # upstream-first walk carries segment ids down the channel
    for cell in flow.order[::-1]:
        if not is_channel[cell]:
            continue
        if seg[cell] < 0:
            raise ConsistencyError(f"channel cell {cell} reached before its upstream segment")
        t = receiver[cell]
        if t >= 0 and is_channel[t] and inflow[t] == 1:
            seg[t] = seg[cell]

    downstream = {}
    outlets = {}
    for cell in np.flatnonzero(is_channel):
        s = int(seg[cell])
        t = receiver[cell]
        if t < 0 or not is_channel[t] or seg[t] != s:
            outlets[s] = int(cell)
            downstream[s] = int(seg[t]) if t >= 0 and is_channel[t] else None

    labels = np.full(n, -1, dtype=np.int64)
    labels[is_channel] = seg[is_channel]
    for cell in flow.order:
        if labels[cell] >= 0:
            continue
        t = receiver[cell]
        if t < 0:
            r, c = divmod(int(cell), flow.directions.ncols)
            raise ConsistencyError(f"cell (row {r}, col {c}) drains to no channel")
        labels[cell] = labels[t]

    count = int(starts.size)
    counts = np.bincount(labels[valid], minlength=count)
    cell_km2 = flow.directions.cell_area / 1e6
    areas = {ws: float(counts[ws] * cell_km2) for ws in range(count)}
    _check_acyclic(downstream)
    label_grid = flow.directions.masked(
        labels.reshape(flow.directions.shape).astype(np.float64), valid.reshape(flow.directions.shape)
    )
    return WatershedPartition(
        labels=label_grid,
        count=count,
        areas=areas,
        downstream={k: downstream[k] for k in sorted(downstream)},
        outlets={k: outlets[k] for k in sorted(outlets)},
    )


def _check_acyclic(downstream: dict) -> None:
    for start in downstream:
        seen = {start}
        node = downstream[start]
        while node is not None:
            if node in seen:
                raise ConsistencyError(f"watershed downstream relation has a cycle at {node}")
            seen.add(node)
            node = downstream.get(node)


def distance_to_channels(channels: Grid) -> Grid:
    """Euclidean distance in metres to the nearest channel cell."""
    return euclidean_distance(channels)
