"""RGB-D road segmentation: fusion network, multi-dataset loss and metrics."""

from ._rfnet import (
    ConfigError,
    ContractError,
    DataError,
    Error,
    IoError,
    NumericError,
    ShapeError,
    binned_iou,
    confusion,
    cosine_lr,
    depth_from_disparity,
    evaluate,
    generate_dataset,
    generate_scene,
    grad_check,
    iou,
    multisource_loss,
    parameter_count,
    remap_labels,
    train,
    variants,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "Error",
    "IoError",
    "NumericError",
    "ShapeError",
    "binned_iou",
    "confusion",
    "cosine_lr",
    "depth_from_disparity",
    "evaluate",
    "generate_dataset",
    "generate_scene",
    "grad_check",
    "iou",
    "multisource_loss",
    "parameter_count",
    "remap_labels",
    "train",
    "variants",
]
