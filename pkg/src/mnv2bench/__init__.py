"""From-scratch MobileNetV2 inference engine and food-image benchmark harness."""

__version__ = "0.1.0"

from .archive import ArchiveError, load_model, read_archive, write_archive
from .dataset import CLASS_NAMES, NUM_CLASSES, scan_dataset
from .estimators import FrozenFeatureExtractor, HeadClassifier, ImagePreprocessor
from .model import (
    build_mobilenetv2,
    classify_features,
    extract_features,
    forward,
    init_head,
    model_to_tensors,
    parameter_count,
)
from .pipeline import (
    AugmentConfig,
    PreprocConfig,
    augment,
    load_rgb8,
    preprocess,
    resize_bilinear,
)
from .training import TrainConfig, evaluate, train_head

__all__ = [
    "__version__",
    "ArchiveError",
    "load_model",
    "read_archive",
    "write_archive",
    "CLASS_NAMES",
    "NUM_CLASSES",
    "scan_dataset",
    "FrozenFeatureExtractor",
    "HeadClassifier",
    "ImagePreprocessor",
    "build_mobilenetv2",
    "classify_features",
    "extract_features",
    "forward",
    "init_head",
    "model_to_tensors",
    "parameter_count",
    "AugmentConfig",
    "PreprocConfig",
    "augment",
    "load_rgb8",
    "preprocess",
    "resize_bilinear",
    "TrainConfig",
    "evaluate",
    "train_head",
]
