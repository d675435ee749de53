"""Synthetic flood scenarios with planted ground truth.

The generator builds a fractal DEM draining to a single outlet, derives the
watershed tree, and floods watersheds through two mechanisms: a local one
driven by rainfall and wetness, and a propagated one driven by the soil clay
content of drainage-connected watersheds.  Soil clay is constant per
watershed, so the propagated component is invisible to a model that only sees
a point's own factor values.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ._io import write_json
from .exceptions import CapacityError, DomainError
from .raster import Grid, _format_value, store_ascii_grid
from .risk import Asset, write_assets_csv
from .terrain import (
    D8_NEIGHBORS,
    d8_flow,
    delineate_watersheds,
    derive_terrain,
    distance_to_channels,
    extract_channels,
    wetness_indices,
)

DEFAULT_YEARS = tuple(range(2018, 2024))
XLL, YLL = 500000.0, 3500000.0
_EPS_Z = 0.01


@dataclass(frozen=True)
class ScenarioParams:
    size: tuple = (128, 128)
    cellsize: float = 100.0
    seed: int = 0
    flood_fraction: float = 0.06
    years: tuple = DEFAULT_YEARS
    relief_m: float = 60.0
    tilt_m: float = 150.0
    channel_area_km2: float = 1.0
    watershed_area_km2: float = 1.0
    flooded_share: float = 0.35
    local_weight: float = 1.0
    propagated_weight: float = 2.0
    score_noise: float = 0.3
    year_flood_prob: float = 0.75
    wetness_preference: float = 0.3
    min_flood_cells: int = 30

    def __post_init__(self):
        rows, cols = self.size
        if rows < 64 or cols < 64:
            raise DomainError(f"scenario size must be at least 64x64, got {self.size}")
        if not 0 < self.flood_fraction < 0.2:
            raise DomainError(f"flood_fraction must lie in (0, 0.2), got {self.flood_fraction}")
        if not 0 < self.flooded_share < 1:
            raise DomainError("flooded_share must lie in (0, 1)")


@dataclass
class Scenario:
    params: ScenarioParams
    dem: Grid
    rainfall: Grid
    soil_clay: Grid
    lulc: Grid
    permanent_water: Grid
    districts: Grid
    reference_db: Grid
    monsoon_db: dict
    truth: Grid
    truth_by_year: dict
    flooded_watersheds: tuple
    assets: list = field(default_factory=list)

    def grids(self) -> dict:
        out = {
            "dem": self.dem,
            "rainfall": self.rainfall,
            "soil_clay": self.soil_clay,
            "lulc": self.lulc,
            "permanent_water": self.permanent_water,
            "districts": self.districts,
            "reference_db": self.reference_db,
            "truth": self.truth,
        }
        for year, g in self.monsoon_db.items():
            out[f"monsoon_db_{year}"] = g
        return out

    def write(self, out_dir) -> dict:
        """Write every grid as ``.asc`` plus assets and a JSON echo; returns paths."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, g in self.grids().items():
            p = out_dir / f"{name}.asc"
            store_ascii_grid(g, p)
            paths[name] = p
        write_assets_csv(self.assets, out_dir / "assets.csv")
        paths["assets"] = out_dir / "assets.csv"
        echo = {k: v for k, v in self.params.__dict__.items()}
        echo["flooded_watersheds"] = list(self.flooded_watersheds)
        write_json(echo, out_dir / "scenario.json")
        paths["scenario"] = out_dir / "scenario.json"
        return paths


def _round6(a: np.ndarray) -> np.ndarray:
    """Round to the precision the ASCII grid writer keeps, so files round-trip."""
    return np.array([float(_format_value(v)) for v in a.ravel()]).reshape(a.shape)


def diamond_square(n_pow: int, roughness: float, rng) -> np.ndarray:
    """Square fractal surface of side ``2**n_pow + 1`` with values in about [-1, 1]."""
    n = 2 ** n_pow + 1
    z = np.zeros((n, n))
    z[0, 0], z[0, -1], z[-1, 0], z[-1, -1] = rng.uniform(-1, 1, 4)
    step, scale = n - 1, 1.0
    while step > 1:
        h = step // 2
        # diamond step: centres of squares
        centers = (z[:-1:step, :-1:step] + z[:-1:step, step::step]
                   + z[step::step, :-1:step] + z[step::step, step::step]) / 4
        z[h::step, h::step] = centers + rng.uniform(-scale, scale, centers.shape)
        # square step: edge midpoints
        for r0, c0 in ((0, h), (h, 0)):
            rr, cc = np.meshgrid(np.arange(r0, n, step), np.arange(c0, n, step), indexing="ij")
            total = np.zeros(rr.shape)
            cnt = np.zeros(rr.shape)
            for dr, dc in ((-h, 0), (h, 0), (0, -h), (0, h)):
                r2, c2 = rr + dr, cc + dc
                ok = (r2 >= 0) & (r2 < n) & (c2 >= 0) & (c2 < n)
                total[ok] += z[r2[ok], c2[ok]]
                cnt[ok] += 1
            z[rr, cc] = total / cnt + rng.uniform(-scale, scale, rr.shape)
        step, scale = h, scale * roughness
    return z / np.abs(z).max()


def _condition_to_outlet(z: np.ndarray, outlet: tuple) -> np.ndarray:
    """Raise cells so each has a strictly lower path to ``outlet`` (epsilon fill)."""
    nrows, ncols = z.shape
    out = z.copy()
    seen = np.zeros(z.shape, dtype=bool)
    heap = [(out[outlet], 0, outlet[0], outlet[1])]
    seen[outlet] = True
    counter = 1
    while heap:
        zc, _, r, c = heapq.heappop(heap)
        for dr, dc, _ in D8_NEIGHBORS:
            rn, cn = r + dr, c + dc
            if 0 <= rn < nrows and 0 <= cn < ncols and not seen[rn, cn]:
                seen[rn, cn] = True
                if out[rn, cn] < zc + _EPS_Z:
                    out[rn, cn] = zc + _EPS_Z
                heapq.heappush(heap, (out[rn, cn], counter, rn, cn))
                counter += 1
    return out


def _smooth_field(shape, sigma, rng) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.normal(size=shape), sigma, mode="reflect")
    return (f - f.mean()) / f.std()


def _zscore(v: np.ndarray) -> np.ndarray:
    s = v.std()
    return (v - v.mean()) / s if s > 0 else np.zeros_like(v)


def generate_scenario(size=(128, 128), cellsize: float = 100.0, seed: int = 0,
                      flood_fraction: float = 0.06, **kwargs) -> Scenario:
    """Generate a deterministic synthetic scenario (see module docstring)."""
    if isinstance(size, int):
        size = (size, size)
    params = ScenarioParams(size=tuple(size), cellsize=cellsize, seed=seed,
                            flood_fraction=flood_fraction, **kwargs)
    rows, cols = params.size
    rng = np.random.default_rng(seed)
    cs = params.cellsize

    # terrain: fractal relief on a valley draining to the bottom-centre cell
    n_pow = int(np.ceil(np.log2(max(rows, cols) - 1)))
    frac = diamond_square(n_pow, 0.55, rng)[:rows, :cols]
    rr, cc = np.indices((rows, cols))
    tilt = params.tilt_m * (1 - rr / (rows - 1))
    valley = 0.4 * params.tilt_m * np.abs(cc - (cols - 1) / 2) / ((cols - 1) / 2)
    z = 200.0 + tilt + valley + params.relief_m * frac
    # a raised rim makes border cells drain inwards, so no channel runs along an edge
    rim = np.zeros((rows, cols), dtype=bool)
    rim[[0, -1], :] = True
    rim[:, [0, -1]] = True
    z[rim] += 5.0
    # short gorge above the outlet keeps channel junctions off the border row
    oc = cols // 2
    zmin = z.min()
    for k, drop in enumerate((10.0, 9.9, 9.8)):
        z[rows - 1 - k, oc] = zmin - drop
    z = _condition_to_outlet(z, (rows - 1, oc))
    dem = Grid(_round6(z), XLL, YLL, cs)

    flow = d8_flow(dem)
    terrain = derive_terrain(dem)
    twi, _ = wetness_indices(flow, terrain)
    channels = extract_channels(flow, params.channel_area_km2)
    dist = distance_to_channels(channels)
    ws_channels = extract_channels(flow, params.watershed_area_km2)
    part = delineate_watersheds(flow, ws_channels)
    n_ws = part.count
    labels = part.labels.values.astype(np.int64)

    # factor analogues
    rain = 1500 + 600 * (cc / (cols - 1)) + 120 * _smooth_field((rows, cols), 12, rng)
    clay_ws = rng.uniform(10, 50, n_ws)
    clay = clay_ws[labels] + rng.normal(0, 1.0, (rows, cols))
    lulc_field = _smooth_field((rows, cols), 6, rng)
    lulc = np.digitize(lulc_field, [-1.0, -0.3, 0.3, 1.0]) + 1.0
    acc = flow.accumulation.values
    permanent = (acc * cs * cs >= 0.25 * rows * cols * cs * cs).astype(np.float64)

    slope = terrain.slope
    plausible = (
        slope.valid & (slope.values < 15.0) & dist.valid & (dist.values <= 2000.0)
        & (permanent == 0)
    )

    # watershed flood propensity: local wetness/rain plus clay of connected watersheds
    cnt = np.bincount(labels.ravel(), minlength=n_ws)
    rain_ws = np.bincount(labels.ravel(), weights=rain.ravel(), minlength=n_ws) / cnt
    twi_ok = twi.valid
    twi_ws = (np.bincount(labels[twi_ok], weights=twi.values[twi_ok], minlength=n_ws)
              / np.maximum(np.bincount(labels[twi_ok], minlength=n_ws), 1))
    local = _zscore(0.5 * _zscore(rain_ws) + 0.5 * _zscore(twi_ws))
    propagated = _neighbour_mean(part, flow, _zscore(clay_ws))
    score = (params.local_weight * local + params.propagated_weight * propagated
             + params.score_noise * rng.normal(size=n_ws))
    room = np.bincount(labels[plausible], minlength=n_ws) >= params.min_flood_cells
    eligible = np.flatnonzero(room)
    n_flood = max(1, int(round(params.flooded_share * eligible.size)))
    flooded = np.sort(eligible[np.argsort(-score[eligible], kind="stable")[:n_flood]])

    # planted flood cells: plausible, blob-shaped subsets of flooded watersheds
    pref = params.wetness_preference * _zscore(
        ndimage.gaussian_filter(np.where(twi_ok, twi.values, 0), 1.5)
    ) + _smooth_field((rows, cols), 2.0, rng)
    target_cells = params.flood_fraction * rows * cols
    in_flooded = np.isin(labels, flooded)
    share = min(0.9, target_cells / max(1, (in_flooded & plausible).sum()))
    while True:
        truth = _plant(labels, flooded, plausible, pref, share)
        if truth.sum() >= target_cells or share >= 0.9:
            break
        share = min(0.9, share * 1.25)
    if truth.sum() < 0.5 * target_cells:
        raise CapacityError(
            f"only {int(truth.sum())} plausible flood cells for a target of "
            f"{int(target_cells)} (flood_fraction={params.flood_fraction})"
        )
    flooded = np.array([w for w in flooded if truth[labels == w].any()], dtype=np.int64)

    # per-year events and backscatter
    reference = _round6(-8.0 + 0.5 * rng.normal(size=(rows, cols)))
    monsoon, by_year = {}, {}
    for year in params.years:
        active = flooded[rng.random(flooded.size) < params.year_flood_prob]
        t_year = truth & np.isin(labels, active)
        drop = np.where(t_year, 4.0, rng.uniform(0.0, 2.0, (rows, cols)))
        monsoon[year] = Grid(_round6(reference - drop), XLL, YLL, cs)
        by_year[year] = Grid(t_year.astype(np.float64), XLL, YLL, cs)

    districts = 1.0 + (rr >= rows // 2) * 2 + (cc >= cols // 2)
    like = lambda v: Grid(_round6(np.asarray(v, dtype=np.float64)), XLL, YLL, cs)
    scen = Scenario(
        params=params,
        dem=dem,
        rainfall=like(rain),
        soil_clay=like(clay),
        lulc=like(lulc),
        permanent_water=Grid(permanent, XLL, YLL, cs),
        districts=Grid(districts.astype(np.float64), XLL, YLL, cs),
        reference_db=Grid(reference, XLL, YLL, cs),
        monsoon_db=monsoon,
        truth=Grid(truth.astype(np.float64), XLL, YLL, cs),
        truth_by_year=by_year,
        flooded_watersheds=tuple(int(w) for w in flooded),
    )
    scen.assets = _synthetic_assets(scen, channels, rng)
    return scen


def _neighbour_mean(part, flow, v: np.ndarray) -> np.ndarray:
    """Mean of ``v`` over drainage-connected watersheds, weighted by the
    contributing-area ratio of each upstream/downstream pair."""
    n = part.count
    W = np.zeros((n, n))
    for u, d in part.downstream.items():
        if d is None:
            continue
        w = part.contributing_area_km2(flow, u) / part.contributing_area_km2(flow, d)
        W[d, u] += w
        W[u, d] += w
    tot = W.sum(axis=1)
    return np.where(tot > 0, (W @ v) / np.where(tot > 0, tot, 1.0), 0.0)


def _plant(labels, flooded, plausible, pref, share) -> np.ndarray:
    truth = np.zeros(labels.shape, dtype=bool)
    for w in flooded:
        cand = (labels == w) & plausible
        if not cand.any():
            continue
        cut = np.quantile(pref[cand], 1 - share)
        truth |= cand & (pref >= cut)
    # opening with plausibility re-applied in between keeps truth an opened set
    truth = ndimage.binary_opening(truth, structure=np.ones((3, 3)), border_value=0)
    truth &= plausible
    return ndimage.binary_opening(truth, structure=np.ones((3, 3)), border_value=0)


def _synthetic_assets(scen: Scenario, channels: Grid, rng) -> list:
    rows, cols = scen.params.size
    g = scen.dem
    x0, y0, x1, y1 = g.bounds()
    assets = []
    for k, frac in enumerate((0.3, 0.7)):
        y = y0 + frac * (y1 - y0)
        xs = np.linspace(x0 + g.cellsize, x1 - g.cellsize, 6)
        ys = y + rng.normal(0, 2 * g.cellsize, xs.size)
        assets.append(Asset("road", f"road_{k}", tuple(zip(xs, ys))))
    xm = (x0 + x1) / 2
    assets.append(Asset("road", "road_trunk", ((xm + 150.0, y0 + g.cellsize),
                                               (xm + 150.0, y1 - g.cellsize))))
    ch = np.flatnonzero(channels.values.ravel() == 1)
    for k, cell in enumerate(np.sort(rng.choice(ch, size=min(12, ch.size), replace=False))):
        r, c = divmod(int(cell), cols)
        assets.append(Asset("bridge", f"bridge_{k}", (g.cell_center(r, c),)))
    for cat, n in (("hydro", 3), ("settlement", 10), ("tourist", 4)):
        for k in range(n):
            r, c = int(rng.integers(1, rows - 1)), int(rng.integers(1, cols - 1))
            assets.append(Asset(cat, f"{cat}_{k}", (g.cell_center(r, c),)))
    return assets
