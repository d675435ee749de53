from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and ensemble settings shared by every learner.

    The graph model uses ``learning_rate``/``weight_decay``/``epochs`` and the Adam
    constants; the tree ensembles use the ``n_trees``/``max_depth`` family.
    """

    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 200
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    class_weights: str = "balanced"
    dropout: float = 0.30
    hidden: int = 64
    aggregation: str = "weighted"
    n_trees: int = 500
    max_depth: int = 6
    gbt_learning_rate: float = 0.1
    gbt_pos_weight: float = 5.0
    max_bins: int = 64
    stacking_folds: int = 5

    def __post_init__(self):
        for name in ("learning_rate", "adam_eps", "n_trees", "max_depth", "gbt_learning_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.aggregation not in ("weighted", "mean"):
            raise ValueError("aggregation must be 'weighted' or 'mean'")

    def to_dict(self) -> dict:
        return asdict(self)
