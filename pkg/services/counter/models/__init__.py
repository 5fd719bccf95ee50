"""Counter data models."""

from .config_models import (
    AblationVariant,
    DecoderConfig,
    EncoderConfig,
    LossWeights,
    OptimizerConfig,
    RelationConfig,
    ScheduleConfig,
    TrainConfig,
)
from .report_models import EpochMetrics, EvalReport, ImagePrediction, RegionReport, SuiteRow
from .sample_models import ClassSpec, CountingSample, SampleValidationError, SceneSpec, ShapeKind, Texture

__all__ = [
    "AblationVariant",
    "DecoderConfig",
    "EncoderConfig",
    "LossWeights",
    "OptimizerConfig",
    "RelationConfig",
    "ScheduleConfig",
    "TrainConfig",
    "EpochMetrics",
    "EvalReport",
    "ImagePrediction",
    "RegionReport",
    "SuiteRow",
    "ClassSpec",
    "CountingSample",
    "SampleValidationError",
    "SceneSpec",
    "ShapeKind",
    "Texture",
]
