"""Stage-by-stage pipeline driver.

Each stage method computes its products once, writes them under the output
directory and records them in the MANIFEST.  Requesting a stage runs its
prerequisites first.  Output layout::

    terrain/     slope, aspect, plan_curv, prof_curv, tri, twi, spi, flow_dir,
                 flow_acc, channels, dist_river, watersheds (.asc)
    inventory/   flood_mask_<year>.asc, points.csv, train_points.csv, test_points.csv
    factors/     samples_train.csv, samples_test.csv, screening.json
    graph/       nodes.csv, edges.csv, blocks.json
    models/      <kind>.json, sage.json, sage_loss.csv
    evaluation/  lobo_metrics.csv, summary.json
    conformal/   susceptibility, lower, upper, width (.asc/.pgm), coverage.json,
                 coverage_temporal.json
    explain/     attributions.csv, importance.json, dominant_factor.asc, districts.json
    risk/        classes, tiers, gnn_susceptibility (.asc/.pgm), zones.json, exposure.json
    report.json  all metrics of a full run
    MANIFEST     completed stages and the files they wrote
"""
from __future__ import annotations

import csv
import warnings
from pathlib import Path

import numpy as np

from ._io import dumps, write_json
from .config import PIXEL_MODELS, PipelineConfig
from .conformal import calibrate_model, coverage_report, interval_maps
from .evaluation import (
    assign_blocks,
    kmeans_blocks,
    lobo_cv_baselines,
    lobo_cv_graph,
    write_metrics_csv,
)
from .exceptions import StageError
from .explain import district_aggregate, dominant_factor_map, exact_shapley, global_importance
from .factors import FACTOR_NAMES, FactorStack, extract_features, pearson_screen, vif_screen
from .graph import build_graph, point_watershed_lookup, write_graph_csv
from .inventory import (
    Inventory,
    detect_change,
    sample_flood_points,
    sample_nonflood,
    split_temporal,
    write_points_csv,
)
from .models import GraphSAGEClassifier, make_baseline
from .raster import Grid, load_ascii_grid, store_ascii_grid
from .risk import (
    classify,
    classify_values,
    decision_tiers,
    exposure_overlay,
    read_assets_csv,
    write_pgm,
    zone_area_summary,
)
from .terrain import (
    d8_flow,
    delineate_watersheds,
    derive_terrain,
    distance_to_channels,
    extract_channels,
    wetness_indices,
)

STAGES = ("terrain", "inventory", "factors", "graph", "train", "evaluate", "conformal",
          "explain", "risk")
REQUIRED_INPUTS = ("dem", "rainfall", "soil_clay", "lulc", "permanent_water", "reference_db")


class Pipeline:
    def __init__(self, config: PipelineConfig):
        self.cfg = config
        self.input_dir = Path(config.input_dir)
        self.out = Path(config.out_dir)
        self.completed: list = []
        self.files: dict = {}
        self.report: dict = {}
        self._cache: dict = {}

    # ------------------------------------------------------------------ plumbing
    def _input(self, name: str) -> Grid:
        path = self.input_dir / f"{name}.asc"
        if not path.exists():
            raise FileNotFoundError(f"missing input {name!r}: {path}")
        return load_ascii_grid(path)

    def _path(self, stage: str, name: str) -> Path:
        d = self.out / stage
        d.mkdir(parents=True, exist_ok=True)
        self.files.setdefault(stage, []).append(f"{stage}/{name}")
        return d / name

    def _grid(self, stage: str, name: str, grid: Grid, pgm: bool = False, vmin=None, vmax=None):
        store_ascii_grid(grid, self._path(stage, f"{name}.asc"))
        if pgm:
            write_pgm(grid, self._path(stage, f"{name}.pgm"), vmin, vmax)

    def _write_manifest(self, failed: StageError | None = None) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        lines = []
        for stage in self.completed:
            lines.append(f"stage {stage}")
            lines.extend(f"  {f}" for f in self.files.get(stage, []))
        if failed is not None:
            lines.append(f"failed {failed.stage}: {failed.cause}")
        (self.out / "MANIFEST").write_text("\n".join(lines) + "\n")

    def stage(self, name: str):
        """Run ``name`` (and its prerequisites) once; returns its products."""
        if name in self._cache:
            return self._cache[name]
        method = getattr(self, f"_stage_{name}")
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                result = method()
        except StageError:
            raise
        except Exception as exc:
            err = StageError(name, exc)
            self._write_manifest(err)
            raise err from exc
        self._cache[name] = result
        self.completed.append(name)
        self._write_manifest()
        return result

    def run(self, until: str = "risk") -> dict:
        for name in STAGES[: STAGES.index(until) + 1]:
            self.stage(name)
        if until == "risk":
            self.report["config"] = {
                k: v for k, v in vars(self.cfg).items() if k not in ("input_dir", "out_dir")
            }
            (self.out / "report.json").write_text(dumps(self.report))
            self.files.setdefault("report", []).append("report.json")
            self._write_manifest()
        return self.report

    # ------------------------------------------------------------------ stages
    def _stage_terrain(self):
        cfg = self.cfg
        for name in REQUIRED_INPUTS:
            if not (self.input_dir / f"{name}.asc").exists():
                raise FileNotFoundError(
                    f"missing input {name!r}: {self.input_dir / (name + '.asc')}"
                )
        dem = self._input("dem")
        terrain = derive_terrain(dem)
        flow = d8_flow(dem)
        twi, spi = wetness_indices(flow, terrain)
        channels = extract_channels(flow, cfg.channel_area_km2)
        dist = distance_to_channels(channels)
        partition = delineate_watersheds(flow, extract_channels(flow, cfg.watershed_area_km2))
        for name, g in (("slope", terrain.slope), ("aspect", terrain.aspect),
                        ("plan_curv", terrain.plan_curv), ("prof_curv", terrain.prof_curv),
                        ("tri", terrain.tri), ("twi", twi), ("spi", spi),
                        ("flow_dir", flow.directions), ("flow_acc", flow.accumulation),
                        ("channels", channels), ("dist_river", dist),
                        ("watersheds", partition.labels)):
            self._grid("terrain", name, g)
        self.report["terrain"] = {
            "n_watersheds": partition.count,
            "channel_cells": int((channels.values == 1).sum()),
            "watershed_area_km2": {str(k): v for k, v in partition.areas.items()},
        }
        return dict(dem=dem, terrain=terrain, flow=flow, twi=twi, spi=spi, channels=channels,
                     dist=dist, partition=partition)

    def _stack(self, t) -> FactorStack:
        if "stack" not in self._cache:
            grids = {
                "elevation": t["dem"], "slope": t["terrain"].slope, "aspect": t["terrain"].aspect,
                "plan_curv": t["terrain"].plan_curv, "prof_curv": t["terrain"].prof_curv,
                "twi": t["twi"], "spi": t["spi"], "tri": t["terrain"].tri,
                "rainfall": self._input("rainfall"), "lulc": self._input("lulc"),
                "soil_clay": self._input("soil_clay"), "dist_river": t["dist"],
            }
            self._cache["stack"] = FactorStack.from_mapping(grids, FACTOR_NAMES)
        return self._cache["stack"]

    def _years(self):
        cfg = self.cfg
        lo = min(cfg.train_year_start, cfg.test_year_start)
        hi = max(cfg.train_year_end, cfg.test_year_end)
        return [y for y in range(lo, hi + 1)
                if (self.input_dir / f"monsoon_db_{y}.asc").exists()]

    def _stage_inventory(self):
        cfg = self.cfg
        t = self.stage("terrain")
        stack = self._stack(t)
        reference = self._input("reference_db")
        water = self._input("permanent_water")
        years = self._years()
        if not years:
            raise FileNotFoundError(f"missing input 'monsoon_db_<year>' in {self.input_dir}")
        floods, per_year = [], {}
        for year in years:
            mask = detect_change(reference, self._input(f"monsoon_db_{year}"), water,
                                 t["terrain"].slope, t["dist"], cfg.change_threshold_db,
                                 cfg.max_slope_deg, cfg.max_dist_m)
            self._grid("inventory", f"flood_mask_{year}", mask)
            pts = sample_flood_points(mask, cfg.per_year_cap, year, cfg.seed * 10007 + year)
            per_year[str(year)] = {"flagged_cells": int((mask.values == 1).sum()),
                                   "flood_points": len(pts)}
            floods.extend(pts)
        domain = t["dem"].masked(stack.valid().astype(np.float64), t["dem"].valid)
        nonflood = sample_nonflood(domain, floods, cfg.ratio, cfg.buffer_m, cfg.seed)
        inv = Inventory(floods + nonflood, cfg.ratio, cfg.buffer_m)
        split = split_temporal(inv, (cfg.train_year_start, cfg.train_year_end),
                               (cfg.test_year_start, cfg.test_year_end))
        write_points_csv(inv.points, self._path("inventory", "points.csv"))
        write_points_csv(split.train.points, self._path("inventory", "train_points.csv"))
        write_points_csv(split.test.points, self._path("inventory", "test_points.csv"))
        self.report["inventory"] = {
            "years": per_year, "n_flood": len(floods), "n_nonflood": len(nonflood),
            "n_train": len(split.train), "n_test": len(split.test), "dropped": split.dropped,
        }
        return dict(inventory=inv, split=split)

    def _stage_factors(self):
        cfg = self.cfg
        t = self.stage("terrain")
        inv = self.stage("inventory")
        stack = self._stack(t)
        tables = {}
        for name, part in (("train", inv["split"].train), ("test", inv["split"].test)):
            table = extract_features(stack, part.points)
            lookup = point_watershed_lookup(
                t["partition"], [_Pt(x, y) for x, y in zip(table.x, table.y)]
            )
            table.watershed_id = np.array([lookup[i] for i in range(len(table))],
                                          dtype=np.int64)
            tables[name] = table
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            pairs = pearson_screen(tables["train"], cfg.pearson_threshold)
            vifs, flagged = vif_screen(tables["train"], cfg.vif_threshold)
        screening = {
            "pearson_flagged": [list(p) for p in pairs],
            "vif": vifs,
            "vif_flagged": list(flagged),
            "warnings": sorted({str(w.message) for w in caught}),
        }
        write_json(screening, self._path("factors", "screening.json"))
        self.report["screening"] = screening
        return dict(stack=stack, **tables)

    def _stage_graph(self):
        cfg = self.cfg
        t = self.stage("terrain")
        f = self.stage("factors")
        inv = self.stage("inventory")
        graph = build_graph(t["partition"], f["stack"], t["flow"], inv["split"].train.floods)
        write_graph_csv(graph, self._path("graph", "nodes.csv"), self._path("graph", "edges.csv"))
        blocks = kmeans_blocks(graph.centroids, cfg.k_blocks, cfg.seed)
        f["train"] = assign_blocks(f["train"], graph.centroids, blocks)
        f["train"].to_csv(self._path("factors", "samples_train.csv"))
        f["test"].to_csv(self._path("factors", "samples_test.csv"))
        write_json({"k": blocks.k, "block_of_watershed": blocks.block_of_watershed,
                    "centroids": blocks.centroids},
                   self._path("graph", "blocks.json"))
        self.report["graph"] = {
            "n_nodes": graph.n_nodes,
            "n_edges": int(len(graph.src)),
            "n_flooded_nodes": int(graph.labels.sum()),
        }
        return dict(graph=graph, blocks=blocks)

    def _stage_train(self):
        f = self.stage("factors")
        g = self.stage("graph")
        tc = self.cfg.train_config()
        table = f["train"]
        models = {}
        for kind in ("logistic", "forest", "gbt"):
            models[kind] = make_baseline(kind, tc).fit(table.features, table.label)
        models["stacking"] = make_baseline("stacking", tc).fit(
            table.features, table.label,
            fitted_bases=[models["logistic"], models["forest"], models["gbt"]],
        )
        sage = GraphSAGEClassifier.from_config(tc).fit(g["graph"])
        for kind, m in models.items():
            write_json(m.to_dict(), self._path("models", f"{kind}.json"))
        write_json(sage.to_dict(), self._path("models", "sage.json"))
        with self._path("models", "sage_loss.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss"])
            for e, loss in enumerate(sage.loss_curve_, 1):
                w.writerow([e, repr(float(loss))])
        self.report["training"] = {
            "sage_final_loss": float(sage.loss_curve_[-1]),
            "sage_initial_loss": float(sage.loss_curve_[0]),
        }
        return dict(models=models, sage=sage)

    def _stage_evaluate(self):
        f = self.stage("factors")
        g = self.stage("graph")
        self.stage("train")
        tc = self.cfg.train_config()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", UserWarning)
            pixel = lobo_cv_baselines(f["train"], g["blocks"], tc, PIXEL_MODELS)
            sage = lobo_cv_graph(g["graph"], g["blocks"], tc)
        results = dict(pixel, sage=sage)
        write_metrics_csv(list(results.values()), self._path("evaluation", "lobo_metrics.csv"))
        best = max(PIXEL_MODELS, key=lambda k: (pixel[k].mean_auc, -PIXEL_MODELS.index(k)))
        summary = {
            kind: {
                "fold_auc": {str(fr.fold): fr.metrics.auc for fr in r.folds},
                "folds": {str(fr.fold): _metric_dict(fr) for fr in r.folds},
                "mean_auc": r.mean_auc,
                "sd_auc": r.sd_auc,
                "skipped_folds": list(r.skipped),
            }
            for kind, r in results.items()
        }
        out = {
            "models": summary,
            "best_pixel_model": best,
            "gnn_gain": sage.mean_auc - pixel[best].mean_auc,
            "warnings": sorted({str(w.message) for w in caught}),
        }
        write_json(out, self._path("evaluation", "summary.json"))
        self.report["evaluation"] = out
        return dict(results=results, best=best)

    def _stage_conformal(self):
        cfg = self.cfg
        f = self.stage("factors")
        ev = self.stage("evaluate")
        table = f["train"]
        rng = np.random.default_rng(cfg.seed + 17)
        perm = rng.permutation(len(table))
        n_fit = int(round(cfg.fit_fraction * len(table)))
        n_cal = int(round(cfg.calibration_fraction * len(table)))
        fit_idx = np.sort(perm[:n_fit])
        cal_idx = np.sort(perm[n_fit:n_fit + n_cal])
        test_idx = np.sort(perm[n_fit + n_cal:])
        model = make_baseline(ev["best"], cfg.train_config()).fit(
            table.features[fit_idx], table.label[fit_idx]
        )
        cal = calibrate_model(model, table.features[cal_idx], table.label[cal_idx], cfg.alpha)
        held = coverage_report(cal, model.predict_proba(table.features[test_idx]),
                               table.label[test_idx], _classes(cfg, model, table, test_idx))
        held.write(self._path("conformal", "coverage.json"))
        report = {"model": ev["best"], "holdout": held.to_dict()}
        test = f["test"]
        if len(test):
            tmp = coverage_report(cal, model.predict_proba(test.features), test.label,
                                  _classes(cfg, model, test, np.arange(len(test))))
            tmp.write(self._path("conformal", "coverage_temporal.json"))
            report["temporal"] = tmp.to_dict()

        stack = f["stack"]
        X, flat = stack.cell_matrix()
        p = np.full(stack.template.values.size, stack.template.nodata)
        p[flat] = model.predict_proba(X)[:, 1]
        ok = np.zeros(p.size, dtype=bool)
        ok[flat] = True
        susc = stack.template.masked(p.reshape(stack.template.shape),
                                     ok.reshape(stack.template.shape))
        lower, upper, width = interval_maps(cal, susc)
        for name, grid in (("susceptibility", susc), ("lower", lower), ("upper", upper),
                           ("width", width)):
            self._grid("conformal", name, grid, pgm=True, vmin=0.0, vmax=1.0)
        self.report["conformal"] = report
        return dict(cal=cal, model=model, susceptibility=susc, width=width)

    def _stage_explain(self):
        cfg = self.cfg
        t = self.stage("terrain")
        f = self.stage("factors")
        tr = self.stage("train")
        table = f["train"]
        model = tr["models"][cfg.explain_model]
        rng = np.random.default_rng(cfg.seed + 29)
        samples = np.sort(rng.choice(len(table), min(cfg.explain_samples, len(table)),
                                     replace=False))
        background = _stratified_rows(table.label, cfg.explain_background, rng)
        attr = exact_shapley(model, table.features[samples], table.features[background],
                             cfg.explain_output, table.names)
        attr.to_csv(self._path("explain", "attributions.csv"), sample_ids=samples)
        ranking = global_importance(attr)
        dom, dom_attr = dominant_factor_map(model, f["stack"], table.features[background],
                                            partition=t["partition"],
                                            output=cfg.explain_output)
        self._grid("explain", "dominant_factor", dom)
        districts_path = self.input_dir / "districts.asc"
        dist_summary = None
        if districts_path.exists():
            ds = district_aggregate(attr, table.x[samples], table.y[samples],
                                    load_ascii_grid(districts_path))
            dist_summary = {"mean_abs_phi": ds.mean_abs_phi, "dominant": ds.dominant,
                            "n_samples": ds.n_samples, "n_outside": ds.n_outside,
                            "empty_districts": list(ds.empty_districts)}
            write_json(dist_summary, self._path("explain", "districts.json"))
        importance = {
            "model": cfg.explain_model,
            "output": cfg.explain_output,
            "base_value": attr.base_value,
            "ranking": [{"factor": n, "mean_abs_phi": v, "share": s} for n, v, s in ranking],
            "max_efficiency_residual": float(np.abs(attr.efficiency_residual()).max()),
            "watershed_dominant": {
                str(i): table.names[int(j)]
                for i, j in enumerate(np.argmax(np.abs(dom_attr.per_sample), axis=1))
            },
        }
        write_json(importance, self._path("explain", "importance.json"))
        self.report["explain"] = dict(importance, districts=dist_summary)
        return dict(attribution=attr, dominant=dom)

    def _stage_risk(self):
        cfg = self.cfg
        t = self.stage("terrain")
        c = self.stage("conformal")
        g = self.stage("graph")
        tr = self.stage("train")
        classes = classify(c["susceptibility"], cfg.class_bounds)
        tiers = decision_tiers(classes, c["width"], cfg.narrow_width)
        self._grid("risk", "classes", classes, pgm=True, vmin=1, vmax=4)
        self._grid("risk", "tiers", tiers, pgm=True, vmin=1, vmax=4)
        zones = zone_area_summary(classes)
        write_json(zones, self._path("risk", "zones.json"))
        tier_counts = {f"P{k}": int((tiers.values == k).sum()) for k in range(1, 5)}

        node_p = tr["sage"].predict_proba(g["graph"])[:, 1]
        labels = t["partition"].labels
        vals = np.where(labels.valid, node_p[np.where(labels.valid, labels.values, 0)
                                             .astype(np.int64)], labels.nodata)
        gnn = labels.masked(vals, labels.valid)
        self._grid("risk", "gnn_susceptibility", gnn, pgm=True, vmin=0.0, vmax=1.0)

        assets_path = self.input_dir / "assets.csv"
        exposure = {}
        if assets_path.exists():
            exposure = exposure_overlay(read_assets_csv(assets_path), classes)
        write_json(exposure, self._path("risk", "exposure.json"))
        self.report["risk"] = {"zones": zones, "tiers": tier_counts, "exposure": exposure}
        return dict(classes=classes, tiers=tiers)


class _Pt:
    __slots__ = ("x", "y")

    def __init__(self, x, y):
        self.x, self.y = x, y


def _metric_dict(fold) -> dict:
    m = fold.metrics
    return {"auc": m.auc, "f1_macro": m.f1_macro, "kappa": m.kappa, "tpr": m.tpr,
            "fpr": m.fpr, "brier": m.brier, "n_train": fold.n_train, "n_test": fold.n_test}


def _classes(cfg, model, table, idx):
    return classify_values(model.predict_proba(table.features[idx])[:, 1], cfg.class_bounds)


def _stratified_rows(labels, n, rng) -> np.ndarray:
    """Up to ``n`` row indices with class shares matching ``labels``."""
    labels = np.asarray(labels)
    n = min(n, labels.size)
    out = []
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        k = int(round(n * idx.size / labels.size))
        if idx.size and k:
            out.append(rng.choice(idx, min(k, idx.size), replace=False))
    rows = np.sort(np.concatenate(out)) if out else np.arange(n)
    return rows


def run_pipeline(config: PipelineConfig) -> dict:
    return Pipeline(config).run()
