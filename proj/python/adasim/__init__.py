"""Adaptive similarity bootstrapping for self-distillation on vector data."""

from ._adasim import (
    AdasimError,
    TrainResult,
    __version__,
    augment,
    default_config,
    fewshot_eval,
    infonce_loss,
    knn_classify,
    linear_probe,
    make_blobs,
    pretrain,
    select_pair,
    simsiam_loss,
    topk_similarities,
    windowed_distribution,
    windowed_metric,
)

__all__ = [
    "AdasimError",
    "TrainResult",
    "__version__",
    "augment",
    "default_config",
    "fewshot_eval",
    "infonce_loss",
    "knn_classify",
    "linear_probe",
    "make_blobs",
    "pretrain",
    "select_pair",
    "simsiam_loss",
    "topk_similarities",
    "windowed_distribution",
    "windowed_metric",
]
