"""Acceptance criteria, one test per criterion at its stated tolerance.

Each test prints a pass/fail line; the lines are repeated in the pytest
terminal summary.
"""
import math
import time
import warnings

import numpy as np
import pytest
from test_evaluation import hand_metrics
from test_inventory import flood_points

from floodgraph.cli import main
from floodgraph.config import PipelineConfig
from floodgraph.conformal import calibrate, coverage_report, synthetic_draws
from floodgraph.evaluation import compute_metrics, lobo_cv_baselines, lobo_cv_graph, roc_auc
from floodgraph.explain import exact_shapley
from floodgraph.inventory import sample_nonflood
from floodgraph.models import ForestModel, GraphSAGEClassifier, balanced_class_weights
from floodgraph.pipeline import Pipeline
from floodgraph.risk import (
    Asset,
    classify_values,
    decision_tiers,
    exposure_overlay,
    zone_area_summary,
)
from floodgraph.scenario import generate_scenario
from floodgraph.terrain import d8_flow, derive_terrain, wetness_indices
from helpers import make_grid, pairwise_auc, path_count_accumulation, plane, random_graph

N_SCENARIOS = 10


@pytest.fixture(scope="module")
def scenario_runs(tmp_path_factory):
    """LOBO results of every pixel model and the GNN on the seeded scenarios."""
    base = tmp_path_factory.mktemp("scenarios")
    runs = []
    t0 = time.perf_counter()
    for seed in range(N_SCENARIOS):
        d = base / f"s{seed}"
        generate_scenario(seed=seed).write(d)
        cfg = PipelineConfig(input_dir=str(d), out_dir=str(base / f"o{seed}"), seed=seed)
        pipe = Pipeline(cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            factors = pipe.stage("factors")
            graph = pipe.stage("graph")
            tc = cfg.train_config()
            pixel = lobo_cv_baselines(factors["train"], graph["blocks"], tc)
            sage = lobo_cv_graph(graph["graph"], graph["blocks"], tc)
        runs.append(dict(seed=seed, table=factors["train"], graph=graph["graph"],
                         blocks=graph["blocks"], pixel=pixel, sage=sage))
    return runs, time.perf_counter() - t0


def test_criterion_01_flow_routing_oracle(accept):
    with accept(1, "D8 accumulation equals path-count oracle on 50 random 20x20 DEMs") as rec:
        t0 = time.perf_counter()
        mismatches = 0
        for seed in range(50):
            z = np.random.default_rng(seed).random((20, 20)) * 50
            flow = d8_flow(make_grid(z, 30.0))
            oracle = path_count_accumulation(flow.receiver, np.ones((20, 20), dtype=bool))
            mismatches += int((flow.accumulation.values != oracle).sum())
        elapsed = time.perf_counter() - t0
        rec.detail = f"{mismatches} mismatches, {elapsed:.2f} s"
        assert mismatches == 0
        assert elapsed < 5.0


def test_criterion_02_graph_structure_gain(accept, scenario_runs):
    with accept(2, "GNN LOBO AUC gain over best pixel model >= 0.05, wins >= 8/10") as rec:
        runs, elapsed = scenario_runs
        gains = []
        for r in runs:
            best = max(v.mean_auc for v in r["pixel"].values())
            gains.append(r["sage"].mean_auc - best)
        gains = np.array(gains)
        wins = int((gains > 0).sum())
        rec.detail = (f"mean gain {gains.mean():+.3f}, wins {wins}/10, "
                      f"min gain {gains.min():+.3f}, {elapsed:.0f} s")
        assert gains.mean() >= 0.05
        assert wins >= 8
        assert elapsed < 600


def test_criterion_03_conformal_coverage(accept):
    with accept(3, "split-conformal marginal coverage and noisy-stratum undercoverage") as rec:
        t0 = time.perf_counter()
        rng = np.random.default_rng(0)
        cov = []
        for _ in range(200):
            pc, yc = synthetic_draws(500, rng)
            pt, yt = synthetic_draws(500, rng)
            cal = calibrate(np.where(yc == 1, pc, 1 - pc), 0.10)
            cov.append(coverage_report(cal, pt, yt).overall)
        mean_cov = float(np.mean(cov))
        # label noise planted in the very-high stratum only
        pc, yc = synthetic_draws(5000, rng, noise_strata=(4,), noise_rate=0.5)
        pt, yt = synthetic_draws(5000, rng, noise_strata=(4,), noise_rate=0.5)
        rep = coverage_report(calibrate(np.where(yc == 1, pc, 1 - pc), 0.10), pt, yt)
        noisy = rep.by_class["very_high"]
        clean = min(rep.by_class[c] for c in ("low", "moderate", "high"))
        elapsed = time.perf_counter() - t0
        rec.detail = (f"mean coverage {mean_cov:.4f}, noisy stratum {noisy:.3f} "
                      f"vs clean min {clean:.3f}, {elapsed:.1f} s")
        assert 0.885 <= mean_cov <= 0.915
        assert noisy < 0.9 - 0.05 and noisy < clean - 0.05
        assert elapsed < 120


def random_model(rng, d=12, hidden=6, layers=3):
    dims = [d] + [hidden] * (layers - 1) + [2]
    return GraphSAGEClassifier.from_params(
        [[rng.normal(0, 0.5, (o, 2 * i)), rng.normal(0, 0.1, o)]
         for i, o in zip(dims[:-1], dims[1:])], dropout=0.3)


def test_criterion_04_gradient_correctness(accept):
    with accept(4, "GraphSAGE gradients vs central differences on 20 graphs") as rec:
        t0 = time.perf_counter()
        h = 1e-5
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            g = random_graph(rng, int(rng.integers(2, 11)))
            m = random_model(rng)
            m.class_weights_ = balanced_class_weights(g.labels)
            _, grads = m.gradients(g)
            for k, (W, b) in enumerate(m.params_):
                for arr, garr in ((W, grads[k][0]), (b, grads[k][1])):
                    flat, gflat = arr.reshape(-1), garr.reshape(-1)
                    for i in range(flat.size):
                        old = flat[i]
                        flat[i] = old + h
                        up = m.loss(g)
                        flat[i] = old - h
                        down = m.loss(g)
                        flat[i] = old
                        num = (up - down) / (2 * h)
                        err = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), 1e-6)
                        worst = max(worst, err)
        elapsed = time.perf_counter() - t0
        rec.detail = f"max relative error {worst:.2e}, {elapsed:.1f} s"
        assert worst < 1e-4
        assert elapsed < 30


def test_criterion_05_shapley_exactness(accept):
    with accept(5, "Shapley efficiency, linear closed form, dummy feature") as rec:
        t0 = time.perf_counter()
        rng = np.random.default_rng(5)
        X = rng.normal(size=(600, 12))
        y = (X[:, 0] + X[:, 1] * X[:, 2] + rng.normal(0, 0.5, 600) > 0).astype(int)
        X[:, 11] = 0.0  # constant in training: no tree ever reads it
        forest = ForestModel(n_estimators=50, max_depth=6, random_state=0).fit(X, y)
        samples = rng.normal(size=(100, 12))
        background = rng.normal(size=(64, 12))
        attr = exact_shapley(forest, samples, background)
        eff = float(np.abs(attr.efficiency_residual()).max())

        def smooth(Z):
            return np.tanh(Z[:, 0] * Z[:, 1]) + np.sin(Z[:, 2]) * Z[:, 3] + Z[:, 4:11].sum(axis=1)

        rows = exact_shapley(smooth, samples[:10], background, method="rows")
        eff = max(eff, float(np.abs(rows.efficiency_residual()).max()))
        w = rng.normal(size=12)
        w[11] = 0.0
        lin = exact_shapley(lambda Z: Z @ w, samples, background)
        lin_err = float(np.abs(lin.per_sample - w * (samples - background.mean(axis=0))).max())
        dummy_tree = float(np.abs(attr.per_sample[:, 11]).max())
        dummy_rows = float(np.abs(rows.per_sample[:, 11]).max())
        elapsed = time.perf_counter() - t0
        rec.detail = (f"efficiency {eff:.1e}, linear {lin_err:.1e}, "
                      f"dummy {max(dummy_tree, dummy_rows)}, {elapsed:.1f} s")
        assert eff < 1e-8 and lin_err < 1e-8
        assert dummy_tree == 0.0 and dummy_rows == 0.0
        assert elapsed < 120


def test_criterion_06_metric_oracles(accept):
    with accept(6, "rank AUC equals pairwise oracle; metrics match hand formulas") as rec:
        exact = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(2, 201))
            y = rng.integers(0, 2, n)
            y[:2] = [0, 1]
            s = rng.integers(0, 8, n) / 8.0
            exact += roc_auc(s, y) == pairwise_auc(s, y)
        cases = [
            ([0.9, 0.4, 0.5, 0.1], [1, 1, 0, 0]),
            ([0.7, 0.6, 0.55, 0.3, 0.2, 0.8], [1, 0, 1, 0, 0, 0]),
            ([0.51, 0.49, 0.5, 0.5, 0.9, 0.1, 0.6], [0, 1, 1, 0, 1, 0, 1]),
        ]
        hand_ok = 0
        for p, y in cases:
            p, y = np.array(p), np.array(y)
            m, h = compute_metrics(p, y), hand_metrics(p, y)
            hand_ok += all(abs(a - b) <= 1e-15 for a, b in (
                (m.kappa, h["kappa"]), (m.f1_macro, h["f1"]), (m.brier, h["brier"])))
        worked = roc_auc([0.9, 0.4, 0.5, 0.1], [1, 1, 0, 0])
        rec.detail = f"{exact}/100 AUC exact, {hand_ok}/3 hand cases, worked example {worked}"
        assert exact == 100 and hand_ok == 3 and worked == 0.75


def test_criterion_07_terrain_closed_forms(accept):
    with accept(7, "slope, aspect, TWI, SPI closed forms on inclined planes") as rec:
        worst = 0.0
        cs = 30.0
        for gx, gy in [(0.2, 0.0), (0.05, 0.0), (0.3, 0.3), (0.1, -0.25), (-0.4, 0.15)]:
            dem = plane(12, 12, gx, gy, c=500.0, cellsize=cs)
            t = derive_terrain(dem)
            flow = d8_flow(dem)
            twi, spi = wetness_indices(flow, t)
            grad = math.hypot(gx, gy)
            ok = t.slope.valid
            a_s = flow.specific_area.values[ok]
            checks = [
                (t.slope.values[ok], math.degrees(math.atan(grad))),
                (twi.values[ok], np.log(a_s / grad)),
                (spi.values[ok], a_s * grad),
            ]
            aspect = t.aspect.values[ok]
            expect = math.degrees(math.atan2(-gx, -gy)) % 360.0
            worst = max(worst, float(np.max(np.abs((aspect - expect + 180) % 360 - 180)) / expect))
            for got, want in checks:
                worst = max(worst, float(np.max(np.abs(got - want) / np.abs(want))))
        # eastward plane: cell in column c collects c + 1 cells, so a_s = (c + 1) * cs
        dem = plane(6, 10, -0.1, 0.0, c=500.0, cellsize=cs)
        twi, _ = wetness_indices(d8_flow(dem), derive_terrain(dem))
        cols = np.arange(1, 9)
        closed = np.log((cols + 1) * cs / 0.1)
        worst = max(worst, float(np.max(np.abs(twi.values[3, 1:9] - closed) / closed)))
        flat = make_grid(np.full((8, 8), 100.0), cs)
        fflow = d8_flow(flat)
        ftwi, _ = wetness_indices(fflow, derive_terrain(flat))
        ok = ftwi.valid
        floor_err = float(np.max(np.abs(ftwi.values[ok]
                                        - np.log(fflow.specific_area.values[ok] * 1e6))))
        rec.detail = f"max relative error {worst:.1e}, slope-floor error {floor_err:.1e}"
        assert worst < 1e-9 and floor_err < 1e-12


def test_criterion_08_spatial_hygiene(accept, scenario_runs):
    with accept(8, "LOBO folds disjoint and single-block; nonflood buffer >= 1000 m") as rec:
        runs, _ = scenario_runs
        n_folds = bad = 0
        for r in runs:
            node_block = r["blocks"].blocks_for(r["graph"].node_ids)
            fold_sets = [(res.folds, r["table"].block_id) for res in r["pixel"].values()]
            fold_sets.append((r["sage"].folds, node_block))
            for folds, block_id in fold_sets:
                for f in folds:
                    n_folds += 1
                    bad += bool(set(f.train_idx) & set(f.test_idx))
                    bad += len(set(block_id[f.test_idx])) != 1
        min_dist = np.inf
        for seed in range(20):
            rng = np.random.default_rng(seed)
            floods = flood_points(rng, int(rng.integers(1, 15)), 80, 100.0)
            domain = make_grid((rng.random((80, 80)) < 0.9).astype(float), 100.0)
            non = sample_nonflood(domain, floods, 5, 1000.0, seed)
            f = np.array([[p.x, p.y] for p in floods])
            for p in non:
                min_dist = min(min_dist, float(np.sqrt(((f - [p.x, p.y]) ** 2).sum(1)).min()))
        rec.detail = f"{n_folds} folds, {bad} violations, min nonflood distance {min_dist:.0f} m"
        assert bad == 0 and n_folds > 0
        assert min_dist >= 1000.0


def test_criterion_09_deterministic_run(accept, tmp_path):
    with accept(9, "two identical runs give byte-identical reports, each < 60 s") as rec:
        scen = tmp_path / "scen"
        assert main(["generate", "--size", "128", "--seed", "0", "--out", str(scen)]) == 0
        times, reports = [], []
        for name in ("a", "b"):
            t0 = time.perf_counter()
            code = main(["run", "--config", str(scen / "demo.cfg"), "--out", str(tmp_path / name)])
            times.append(time.perf_counter() - t0)
            assert code == 0
            reports.append((tmp_path / name / "report.json").read_bytes())
        rec.detail = f"identical {reports[0] == reports[1]}, run times " + ", ".join(
            f"{t:.1f} s" for t in times)
        assert reports[0] == reports[1]
        assert max(times) < 60


def test_criterion_10_risk_products(accept):
    with accept(10, "class boundaries, tier truth table, zone totals, 3 km road") as rec:
        boundary = {0.0: 1, 0.29: 1, 0.30: 2, 0.4999: 2, 0.50: 3, 0.699: 3, 0.70: 4, 1.0: 4}
        got = classify_values(list(boundary))
        assert list(got) == list(boundary.values())
        table = {(1, 0.10): 4, (1, 0.20): 4, (2, 0.10): 4, (2, 0.20): 4,
                 (3, 0.10): 2, (3, 0.20): 2, (4, 0.10): 1, (4, 0.20): 3}
        classes = make_grid([[c for c, _ in table]])
        widths = make_grid([[w for _, w in table]])
        tiers = decision_tiers(classes, widths).values.ravel().tolist()
        assert tiers == list(table.values())
        rng = np.random.default_rng(10)
        v = rng.integers(1, 5, size=(30, 40)).astype(float)
        v[rng.random(v.shape) < 0.1] = -9999.0
        zones = zone_area_summary(make_grid(v, cellsize=30.0))
        total = sum(z["area_km2"] for z in zones.values())
        valid_area = (v != -9999.0).sum() * 900 / 1e6
        counts_ok = all(zones[n]["cells"] == int((v == c).sum())
                        for c, n in ((1, "low"), (2, "moderate"), (3, "high"), (4, "very_high")))
        cm = make_grid(np.full((10, 120), 3.0), cellsize=30.0)
        road = Asset("road", "r", [(120.0, 150.0), (3120.0, 150.0)])
        exposed = exposure_overlay([road], cm)["road"]["exposed_km"]
        rec.detail = (f"zone total {total:.6f} vs {valid_area:.6f} km2, "
                      f"road exposure {exposed:.4f} km")
        assert counts_ok and abs(total - valid_area) < 1e-12
        assert abs(exposed - 3.0) <= 0.015
