from .augment import AugmentationSpec, augment
from .chamfer import chamfer_distance, chamfer_loss
from .data import PointDataset, generate_dam, generate_pmm, load_dataset, to_dataset
from .train import (
    ENCODER_PREFIX,
    PretrainConfig,
    PretrainResult,
    train_classification,
    train_reconstruction,
    train_segmentation,
    train_simsiam,
)

# method name -> (dataset kind, trainer)
METHODS = {
    "seg-dam": ("dam", train_segmentation),
    "seg-pmm": ("pmm", train_segmentation),
    "cls-pmm": ("pmm", train_classification),
    "recon-dam": ("dam", train_reconstruction),
    "simsiam-dam": ("dam", train_simsiam),
}

__all__ = [
    "AugmentationSpec",
    "ENCODER_PREFIX",
    "METHODS",
    "PointDataset",
    "PretrainConfig",
    "PretrainResult",
    "augment",
    "chamfer_distance",
    "chamfer_loss",
    "generate_dam",
    "generate_pmm",
    "load_dataset",
    "to_dataset",
    "train_classification",
    "train_reconstruction",
    "train_segmentation",
    "train_simsiam",
]
