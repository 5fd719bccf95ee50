"""
==============================================================================
SCENE AND SAMPLE MODELS
==============================================================================
Pydantic models describing how synthetic scenes are drawn (ClassSpec,
SceneSpec) and the annotated counting sample that comes out (CountingSample).
==============================================================================
"""

from enum import Enum
from typing import Any, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from errors import ConfigurationError, DataError

Size2 = Tuple[int, int]
Point = Tuple[float, float]
Box = Tuple[float, float, float, float]


class SampleValidationError(DataError):
    """Raised when annotations are inconsistent with the images they describe"""
    pass


def _as_pair(value: Any) -> Any:
    if isinstance(value, int):
        return (value, value)
    return value


# ============================================================================
# SCENE SPECIFICATION
# ============================================================================

class ShapeKind(str, Enum):
    DISC = "disc"
    SQUARE = "square"
    RING = "ring"
    CROSS = "cross"
    TRIANGLE = "triangle"


class Texture(str, Enum):
    SOLID = "solid"
    STRIPES = "stripes"
    DOTS = "dots"


class ClassSpec(BaseModel):
    """One object class: how many instances, how large, how they look"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    shape: ShapeKind = ShapeKind.DISC
    color: Tuple[float, float, float] = Field(default=(0.9, 0.2, 0.2), description="RGB in [0, 1]")
    texture: Texture = Texture.SOLID
    count_range: Tuple[int, int] = Field(default=(3, 8), description="Inclusive instance count range")
    radius_range: Tuple[float, float] = Field(default=(2.0, 3.5), description="Object half-extent range in pixels")

    @field_validator("color")
    @classmethod
    def _unit_color(cls, value: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(c < 0.0 or c > 1.0 for c in value):
            raise ConfigurationError(f"class color must lie in [0, 1], got {value}")
        return value

    @model_validator(mode="after")
    def _check_ranges(self) -> "ClassSpec":
        low, high = self.count_range
        if low < 0 or high < low:
            raise ConfigurationError(f"invalid count range {self.count_range}")
        r_low, r_high = self.radius_range
        if r_low <= 0 or r_high < r_low:
            raise ConfigurationError(f"invalid radius range {self.radius_range}")
        return self


class SceneSpec(BaseModel):
    """
    Recipe for a synthetic multi-class counting scene.

    `classes[target_class]` is the class to count; every other class is a
    distractor. `min_nontarget_ratio` raises distractor counts until they make
    up at least that fraction of the target count.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    image_size: Size2 = (64, 64)
    exemplar_size: Size2 = (16, 16)
    classes: List[ClassSpec] = Field(default_factory=lambda: [ClassSpec()])
    target_class: int = Field(default=0, ge=0)
    shots: int = Field(default=3, ge=0, le=3)
    min_nontarget_ratio: float = Field(default=0.2, ge=0.0)
    sigma: float = Field(default=1.0, gt=0.0, description="Ground-truth Gaussian width in pixels")
    non_overlap: bool = True
    max_retries: int = Field(default=200, ge=1, description="Placement attempts per object")
    background: Tuple[float, float, float] = (0.45, 0.45, 0.45)
    noise_std: float = Field(default=0.02, ge=0.0)

    square_sizes = field_validator("image_size", "exemplar_size", mode="before")(_as_pair)

    @model_validator(mode="after")
    def _check_target(self) -> "SceneSpec":
        if self.target_class >= len(self.classes):
            raise ConfigurationError(
                f"target_class {self.target_class} out of range for {len(self.classes)} classes"
            )
        return self

    @property
    def target(self) -> ClassSpec:
        return self.classes[self.target_class]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @classmethod
    def preset(cls, name: str, **overrides: Any) -> "SceneSpec":
        """multi (target plus look-alike distractors), single (target only) or transfer (unseen shape family)"""
        target = ClassSpec(shape=ShapeKind.DISC, color=(0.9, 0.2, 0.2), count_range=(4, 10))
        if name == "multi":
            classes = [
                target,
                # same color, other shape
                ClassSpec(shape=ShapeKind.SQUARE, color=(0.9, 0.2, 0.2), count_range=(2, 6)),
                # same shape, other color
                ClassSpec(shape=ShapeKind.DISC, color=(0.2, 0.3, 0.9), texture=Texture.STRIPES, count_range=(2, 6)),
            ]
            data = {"classes": classes}
        elif name == "single":
            data = {"classes": [target], "min_nontarget_ratio": 0.0}
        elif name == "transfer":
            classes = [
                ClassSpec(shape=ShapeKind.CROSS, color=(0.2, 0.8, 0.3), count_range=(4, 10)),
                ClassSpec(shape=ShapeKind.TRIANGLE, color=(0.2, 0.8, 0.3), count_range=(2, 6)),
                ClassSpec(shape=ShapeKind.RING, color=(0.9, 0.8, 0.1), texture=Texture.DOTS, count_range=(2, 6)),
            ]
            data = {"classes": classes}
        else:
            raise ConfigurationError(f"Unknown scene preset '{name}', expected multi, single or transfer")
        data.update(overrides)
        return cls(**data)


# ============================================================================
# COUNTING SAMPLE
# ============================================================================

class CountingSample(BaseModel):
    """
    One annotated query image with its exemplar crops.

    Arrays: query [3,H,W], exemplars M x [3,h,w], density [1,H,W].
    Boxes are (x0, y0, w, h) in query pixels; points are (x, y).
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    sample_id: str = "sample"
    query: np.ndarray
    exemplars: List[np.ndarray] = Field(default_factory=list)
    boxes: List[Box] = Field(default_factory=list)
    points: List[Point] = Field(default_factory=list)
    density: np.ndarray
    nontarget_points: List[Point] = Field(default_factory=list)
    nontarget_classes: List[int] = Field(default_factory=list)
    target_class: int = 0
    spec: Optional[SceneSpec] = None

    @model_validator(mode="after")
    def _check_consistency(self) -> "CountingSample":
        if self.query.ndim != 3 or self.query.shape[0] != 3:
            raise SampleValidationError(f"{self.sample_id}: query must be [3,H,W], got {self.query.shape}")
        height, width = self.query.shape[1:]
        if self.density.shape != (1, height, width):
            raise SampleValidationError(
                f"{self.sample_id}: density shape {self.density.shape} does not match query {self.query.shape}"
            )
        if len(self.exemplars) != len(self.boxes):
            raise SampleValidationError(
                f"{self.sample_id}: {len(self.exemplars)} exemplars but {len(self.boxes)} boxes"
            )
        for label, points in (("point", self.points), ("non-target point", self.nontarget_points)):
            for x, y in points:
                if not (0.0 <= x < width and 0.0 <= y < height):
                    raise SampleValidationError(f"{self.sample_id}: {label} ({x}, {y}) outside {width}x{height} image")
        for x0, y0, w, h in self.boxes:
            if w <= 0 or h <= 0:
                raise SampleValidationError(f"{self.sample_id}: non-positive box size ({w}, {h})")
        if self.nontarget_classes and len(self.nontarget_classes) != len(self.nontarget_points):
            raise SampleValidationError(f"{self.sample_id}: non-target class ids do not match non-target points")
        return self

    @property
    def image_size(self) -> Size2:
        return (self.query.shape[1], self.query.shape[2])

    @property
    def count(self) -> int:
        return len(self.points)

    @property
    def box_sizes(self) -> List[Tuple[float, float]]:
        return [(w, h) for _, _, w, h in self.boxes]
