"""From-scratch multi-class histogram gradient boosting."""
from .booster import (
    Ensemble,
    Hyperparams,
    Tree,
    feature_importance,
    fit,
    fit_arrays,
    predict,
    predict_proba,
    softmax,
    softmax_grad_hess,
)
from .io import dump_text, from_bytes, load_model, save_model, to_bytes

__all__ = [
    "Ensemble",
    "Hyperparams",
    "Tree",
    "dump_text",
    "feature_importance",
    "fit",
    "fit_arrays",
    "from_bytes",
    "load_model",
    "predict",
    "predict_proba",
    "save_model",
    "softmax",
    "softmax_grad_hess",
    "to_bytes",
]
