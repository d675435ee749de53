"""Pipeline configuration stored as a flat ``key = value`` text file."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .models.config import TrainConfig

PIXEL_MODELS = ("logistic", "forest", "gbt", "stacking")


@dataclass(frozen=True)
class PipelineConfig:
    input_dir: str = "scenario"
    out_dir: str = "out"
    seed: int = 0
    # synthetic scenario (generate)
    size_cells: int = 128
    cellsize_m: float = 100.0
    flood_fraction: float = 0.06
    # inventory
    train_year_start: int = 2018
    train_year_end: int = 2022
    test_year_start: int = 2023
    test_year_end: int = 2023
    change_threshold_db: float = -3.0
    max_slope_deg: float = 15.0
    max_dist_m: float = 2000.0
    per_year_cap: int = 40
    ratio: int = 5
    buffer_m: float = 1000.0
    # terrain and graph
    channel_area_km2: float = 1.0
    watershed_area_km2: float = 1.0
    # screening
    pearson_threshold: float = 0.80
    vif_threshold: float = 10.0
    # evaluation and conformal
    k_blocks: int = 5
    alpha: float = 0.10
    fit_fraction: float = 0.60
    calibration_fraction: float = 0.20
    # risk products
    class_low_moderate: float = 0.30
    class_moderate_high: float = 0.50
    class_high_very_high: float = 0.70
    narrow_width: float = 0.15
    # explanation
    explain_model: str = "forest"
    explain_samples: int = 24
    explain_background: int = 16
    explain_output: str = "probability"
    # learners
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 200
    hidden: int = 64
    dropout: float = 0.30
    aggregation: str = "weighted"
    n_trees: int = 500
    max_depth: int = 6
    gbt_learning_rate: float = 0.1
    gbt_pos_weight: float = 5.0
    max_bins: int = 64
    stacking_folds: int = 5

    def __post_init__(self):
        checks = [
            (self.size_cells >= 64, "size_cells must be >= 64"),
            (self.cellsize_m > 0, "cellsize_m must be positive"),
            (0 < self.flood_fraction < 0.2, "flood_fraction must lie in (0, 0.2)"),
            (self.train_year_start <= self.train_year_end, "train years reversed"),
            (self.test_year_start <= self.test_year_end, "test years reversed"),
            (self.change_threshold_db < 0, "change_threshold_db must be negative"),
            (0 < self.max_slope_deg <= 90, "max_slope_deg must lie in (0, 90]"),
            (self.max_dist_m > 0, "max_dist_m must be positive"),
            (self.per_year_cap >= 1, "per_year_cap must be >= 1"),
            (self.ratio >= 1, "ratio must be >= 1"),
            (self.buffer_m >= 0, "buffer_m must be non-negative"),
            (self.channel_area_km2 >= 0, "channel_area_km2 must be non-negative"),
            (self.watershed_area_km2 > 0, "watershed_area_km2 must be positive"),
            (0 < self.pearson_threshold <= 1, "pearson_threshold must lie in (0, 1]"),
            (self.vif_threshold >= 1, "vif_threshold must be >= 1"),
            (self.k_blocks >= 2, "k_blocks must be >= 2"),
            (0 < self.alpha < 1, "alpha must lie in (0, 1)"),
            (0 < self.fit_fraction and 0 < self.calibration_fraction
             and self.fit_fraction + self.calibration_fraction < 1,
             "fit_fraction + calibration_fraction must be < 1"),
            (0 < self.class_low_moderate < self.class_moderate_high
             < self.class_high_very_high < 1, "class boundaries must increase within (0, 1)"),
            (0 < self.narrow_width < 1, "narrow_width must lie in (0, 1)"),
            (self.explain_model in PIXEL_MODELS, f"explain_model must be one of {PIXEL_MODELS}"),
            (self.explain_samples >= 1 and self.explain_background >= 1,
             "explain sizes must be >= 1"),
            (self.explain_output in ("probability", "logit"),
             "explain_output must be 'probability' or 'logit'"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        self.train_config()

    @property
    def class_bounds(self) -> tuple:
        return (self.class_low_moderate, self.class_moderate_high, self.class_high_very_high)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            epochs=self.epochs,
            seed=self.seed if seed is None else seed,
            dropout=self.dropout,
            hidden=self.hidden,
            aggregation=self.aggregation,
            n_trees=self.n_trees,
            max_depth=self.max_depth,
            gbt_learning_rate=self.gbt_learning_rate,
            gbt_pos_weight=self.gbt_pos_weight,
            max_bins=self.max_bins,
            stacking_folds=self.stacking_folds,
        )

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "PipelineConfig":
        types = {f.name: type(f.default) for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
            try:
                values[key] = types[key](val)
            except ValueError:
                raise ValueError(f"{source}:{lineno}: bad value for {key}: {val!r}") from None
        return cls(**values)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        return cls.from_text(path.read_text(), str(path))

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})
