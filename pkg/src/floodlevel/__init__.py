"""Water level estimation from single images, trained with strong depth
labels plus weakly supervised pairwise rankings."""

__version__ = "0.1.0"

from .levels import aggregate_object_levels, cm_to_level, level_to_cm
from .losses import LossWeights, ranking_loss, regression_loss, total_loss
from .manifest import DatasetManifest, SampleRecord, load_manifest, save_manifest
from .pairing import RankPair, derive_rank_targets, enumerate_pairs

__all__ = [
    "__version__",
    "aggregate_object_levels",
    "cm_to_level",
    "level_to_cm",
    "LossWeights",
    "ranking_loss",
    "regression_loss",
    "total_loss",
    "DatasetManifest",
    "SampleRecord",
    "load_manifest",
    "save_manifest",
    "RankPair",
    "derive_rank_targets",
    "enumerate_pairs",
]
