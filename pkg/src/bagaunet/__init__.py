"""Atlas-guided dual-path attention segmentation of white-matter hyperintensities."""

from .augment import AugmentConfig, augment
from .dataset import DatasetSplit, load_cases, read_manifest, split_dataset, write_manifest
from .errors import ConfigError, DataError, TrainingAborted
from .losses import tversky_index, tversky_loss
from .metrics import (
    LesionSet,
    MetricReport,
    avd,
    connected_components,
    dsc,
    evaluate,
    lesion_f1,
    lesion_recall,
)
from .model import (
    AttentionFusion,
    AttentionGate,
    AttentionGateSpec,
    BAGAUNet,
    ModelSpec,
    MultiInputAttention,
    VARIANTS,
    build_model,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from .phantom import PhantomConfig, generate_case, generate_dataset
from .slicing import SliceBatch, extract_slices, restack_slices
from .training import (
    PredictionVolume,
    TrainConfig,
    TrainState,
    overfit_probe,
    predict,
    train,
    validation_dsc,
)
from .volume import CaseRecord, Volume3D, load_case, load_volume, normalize_zscore, save_volume

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "AttentionFusion",
    "AttentionGate",
    "AttentionGateSpec",
    "BAGAUNet",
    "CaseRecord",
    "ConfigError",
    "DataError",
    "DatasetSplit",
    "LesionSet",
    "MetricReport",
    "ModelSpec",
    "MultiInputAttention",
    "PhantomConfig",
    "PredictionVolume",
    "SliceBatch",
    "TrainConfig",
    "TrainState",
    "TrainingAborted",
    "VARIANTS",
    "Volume3D",
    "augment",
    "avd",
    "build_model",
    "connected_components",
    "dsc",
    "evaluate",
    "extract_slices",
    "generate_case",
    "generate_dataset",
    "lesion_f1",
    "lesion_recall",
    "load_case",
    "load_cases",
    "load_checkpoint",
    "load_volume",
    "normalize_zscore",
    "overfit_probe",
    "parameter_count",
    "predict",
    "read_manifest",
    "restack_slices",
    "save_checkpoint",
    "save_volume",
    "split_dataset",
    "train",
    "tversky_index",
    "tversky_loss",
    "validation_dsc",
    "write_manifest",
]
