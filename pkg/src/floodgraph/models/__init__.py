from .baselines import (
    KINDS,
    BoostedTreesModel,
    ForestModel,
    LogisticModel,
    StackingModel,
    balanced_class_weights,
    fit_baseline,
    make_baseline,
    model_from_dict,
    predict_baseline,
)
from .config import TrainConfig
from .sage import GraphSAGEClassifier, fit_sage, sage_forward, sage_gradients

__all__ = [
    "KINDS",
    "BoostedTreesModel",
    "ForestModel",
    "GraphSAGEClassifier",
    "LogisticModel",
    "StackingModel",
    "TrainConfig",
    "balanced_class_weights",
    "fit_baseline",
    "fit_sage",
    "make_baseline",
    "model_from_dict",
    "predict_baseline",
    "sage_forward",
    "sage_gradients",
]
