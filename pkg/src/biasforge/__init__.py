"""biasforge: diagnose per-class bias, render targeted training data, retrain, compare.

The pipeline in one pass: ingest real images into a provenance-tagged
manifest, train a baseline classifier, bootstrap its per-class accuracy,
identify the weak classes, render procedural images for them, merge and
retrain, then compare the models class by class.

Heavy dependencies load lazily: importing :mod:`biasforge` gives the
manifest, bootstrap and report machinery; the trainer (torch) and plotting
(matplotlib) load on first use of their modules.
"""

from .bootstrap import (
    BootstrapConfig,
    ClassAccuracyStats,
    bootstrap_per_class,
    confidence_interval,
    per_class_accuracy,
    percentile_interval,
)
from .errors import (
    BiasforgeError,
    ClassSetMismatch,
    ConfigError,
    DataError,
    DuplicatePath,
    EmptyClass,
    EmptyDataset,
    IncompletePredictions,
    InsufficientClassSize,
    InsufficientSamples,
    KTooLarge,
    MetadataMismatch,
    MissingMetadata,
    MissingPretrained,
    UnknownClass,
)
from .manifest import (
    DatasetManifest,
    ImageRecord,
    IngestResult,
    SplitResult,
    ingest,
    merge,
    stratified_split,
)
from .predictions import PredictionRow, PredictionTable
from .render import RenderBatch, RenderSpec, import_external_batch, render_batch
from .report import (
    AugmentationRecommendation,
    ComparisonReport,
    compare_models,
    identify_bias,
    recommend_augmentation,
)
from .seeds import derive_seed

__version__ = "0.1.0"

__all__ = [
    "AugmentationRecommendation",
    "BiasforgeError",
    "BootstrapConfig",
    "ClassAccuracyStats",
    "ClassSetMismatch",
    "ComparisonReport",
    "ConfigError",
    "DataError",
    "DatasetManifest",
    "DuplicatePath",
    "EmptyClass",
    "EmptyDataset",
    "ImageRecord",
    "IncompletePredictions",
    "IngestResult",
    "InsufficientClassSize",
    "InsufficientSamples",
    "KTooLarge",
    "MetadataMismatch",
    "MissingMetadata",
    "MissingPretrained",
    "PredictionRow",
    "PredictionTable",
    "RenderBatch",
    "RenderSpec",
    "SplitResult",
    "UnknownClass",
    "bootstrap_per_class",
    "compare_models",
    "confidence_interval",
    "derive_seed",
    "identify_bias",
    "ingest",
    "merge",
    "per_class_accuracy",
    "percentile_interval",
    "recommend_augmentation",
    "render_batch",
    "stratified_split",
    "import_external_batch",
]
