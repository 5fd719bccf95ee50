"""
==============================================================================
CONFIGURATION MODELS v1.0
==============================================================================
Strongly-typed pydantic models for every tunable of the counting pipeline:
encoder, relation learner, decoder, losses, ablation switches, optimizer,
schedule and the training run that ties them together.

Three profiles ship with the service:
- desk:    64x64 queries, 8px patches, C=32, 2 heads, 2 layers, 16x16 exemplars
           pooled to 3x3 prototypes (default)
- minimal: desk with 1x1 prototypes
- full:    16px patches, C=768, 12 heads, 12 layers, 512x512 queries,
           48x48 exemplars, lr 1e-4 halved every 40 epochs, batch 8, 100 epochs
==============================================================================
"""

import math
from typing import Any, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from errors import ConfigurationError

Size2 = Tuple[int, int]


def _as_pair(value: Any) -> Any:
    if isinstance(value, int):
        return (value, value)
    return value


class _Frozen(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ============================================================================
# MODEL ARCHITECTURE
# ============================================================================

class EncoderConfig(_Frozen):
    """Patch embedding plus the stack of mutual relation layers"""
    patch_size: int = Field(default=8, ge=1, description="Patch side S in pixels")
    embed_dim: int = Field(default=32, ge=1, description="Token width C")
    heads: int = Field(default=2, ge=1, description="Attention heads h")
    layers: int = Field(default=2, ge=0, description="Encoder layers L")
    query_size: Size2 = Field(default=(64, 64), description="Query image H x W")
    exemplar_size: Size2 = Field(default=(16, 16), description="Exemplar crop H x W after resizing")
    shots: int = Field(default=3, ge=0, le=3, description="Exemplars M used per sample")
    zero_shot: bool = Field(default=False, description="Replace exemplar images with learnable tokens")
    mlp_ratio: float = Field(default=2.0, gt=0, description="Feed-forward hidden width / C")
    init_std: float = Field(default=0.02, gt=0)
    ln_eps: float = Field(default=1e-5, gt=0)

    square_sizes = field_validator("query_size", "exemplar_size", mode="before")(_as_pair)

    @model_validator(mode="after")
    def _check_geometry(self) -> "EncoderConfig":
        if self.embed_dim % self.heads:
            raise ConfigurationError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        for label, (height, width) in (("query", self.query_size), ("exemplar", self.exemplar_size)):
            if height % self.patch_size or width % self.patch_size:
                raise ConfigurationError(
                    f"{label} size {height}x{width} is not divisible by patch size {self.patch_size}"
                )
        if self.shots == 0 and not self.zero_shot:
            raise ConfigurationError("shots=0 requires zero_shot=true (no exemplar source)")
        if self.zero_shot and self.shots != 0:
            raise ConfigurationError("zero_shot=true requires shots=0")
        return self

    @property
    def query_grid(self) -> Size2:
        return (self.query_size[0] // self.patch_size, self.query_size[1] // self.patch_size)

    @property
    def exemplar_grid(self) -> Size2:
        return (self.exemplar_size[0] // self.patch_size, self.exemplar_size[1] // self.patch_size)

    @property
    def query_tokens(self) -> int:
        return self.query_grid[0] * self.query_grid[1]

    @property
    def tokens_per_exemplar(self) -> int:
        return self.exemplar_grid[0] * self.exemplar_grid[1]

    @property
    def ffn_hidden(self) -> int:
        return max(1, int(round(self.embed_dim * self.mlp_ratio)))


class RelationConfig(_Frozen):
    """Prototype extraction and matching"""
    prototype_size: int = Field(default=3, ge=1, description="Prototype side s (odd)")
    iterations: int = Field(default=3, ge=1, description="Adaptation iterations K")
    heads: int = Field(default=2, ge=1)
    mlp_ratio: float = Field(default=2.0, gt=0)
    shape_hidden: int = Field(default=16, ge=1, description="Hidden width of the box-shape map")

    @field_validator("prototype_size")
    @classmethod
    def _odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ConfigurationError(f"prototype_size must be odd, got {value}")
        return value


class DecoderConfig(_Frozen):
    """Convolution + x2 upsampling stages; widths halve per stage from C"""
    leaky_slope: float = Field(default=0.01, ge=0.0, lt=1.0)
    head_init_std: float = Field(
        default=0.05, gt=0.0, description="Std of the 1x1 head kernel; small values start predicted counts near zero"
    )


class LossWeights(_Frozen):
    lambda1: float = Field(default=0.3, ge=0.0, description="Auxiliary density loss weight")
    lambda2: float = Field(default=0.05, ge=0.0, description="Target-background discriminative loss weight")


class AblationVariant(_Frozen):
    """Component switches; the dependency graph is tbd -> bt -> mrm"""
    mrm: bool = Field(default=True, description="Co-relation terms between query and exemplar streams")
    bt: bool = Field(default=True, description="Learnable background token on the exemplar side")
    tbd: bool = Field(default=True, description="Target-background discriminative loss")

    @model_validator(mode="after")
    def _check_dependencies(self) -> "AblationVariant":
        if self.tbd and not self.bt:
            raise ConfigurationError("tbd=true requires bt=true (the loss reads background-token alignment)")
        if self.bt and not self.mrm:
            raise ConfigurationError("bt=true requires mrm=true (the token only acts through co-relations)")
        return self

    @property
    def label(self) -> str:
        return f"mrm={int(self.mrm)},bt={int(self.bt)},tbd={int(self.tbd)}"


# ============================================================================
# OPTIMIZATION
# ============================================================================

class OptimizerConfig(_Frozen):
    """Adaptive moments with decoupled weight decay"""
    lr: float = Field(default=1e-3, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(default=1e-8, gt=0)
    weight_decay: float = Field(default=5e-4, ge=0)
    grad_clip: float = Field(default=1.0, ge=0, description="Global norm clip; 0 disables")


class ScheduleConfig(_Frozen):
    halve_every: int = Field(default=100, ge=1, description="Epochs between learning-rate halvings")


class TrainConfig(_Frozen):
    """Complete description of one training run"""
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    relation: RelationConfig = Field(default_factory=RelationConfig)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    ablation: AblationVariant = Field(default_factory=AblationVariant)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    batch_size: int = Field(default=4, ge=1)
    epochs: int = Field(default=200, ge=1)
    seed: int = Field(default=0, ge=0)
    precision: str = Field(default="float64", pattern="^(float64|float32)$")
    augment_flip: bool = False
    eval_every: int = Field(default=1, ge=0, description="Evaluate every N epochs when an eval split is given")

    @model_validator(mode="after")
    def _check_cross_section(self) -> "TrainConfig":
        if self.encoder.embed_dim % self.relation.heads:
            raise ConfigurationError(
                f"embed_dim {self.encoder.embed_dim} is not divisible by relation heads {self.relation.heads}"
            )
        stages = math.log2(self.encoder.patch_size)
        if stages != int(stages):
            raise ConfigurationError(
                f"patch size {self.encoder.patch_size} cannot be reached by x2 upsampling stages"
            )
        return self

    @property
    def effective_loss(self) -> LossWeights:
        """Loss weights with the TBD term removed when the ablation disables it"""
        if self.ablation.tbd:
            return self.loss
        return LossWeights(lambda1=self.loss.lambda1, lambda2=0.0)

    def with_changes(self, **changes: Any) -> "TrainConfig":
        data = self.model_dump()
        for key, value in changes.items():
            target = data
            parts = key.split(".")
            for part in parts[:-1]:
                target = target[part]
            target[parts[-1]] = value.model_dump() if isinstance(value, BaseModel) else value
        return TrainConfig.model_validate(data)

    @classmethod
    def profile(cls, name: str) -> "TrainConfig":
        if name == "desk":
            return cls()
        if name == "minimal":
            return cls(relation=RelationConfig(prototype_size=1))
        if name == "full":
            return cls(
                encoder=EncoderConfig(
                    patch_size=16, embed_dim=768, heads=12, layers=12,
                    query_size=(512, 512), exemplar_size=(48, 48), shots=3, mlp_ratio=4.0,
                ),
                relation=RelationConfig(prototype_size=3, iterations=3, heads=8, mlp_ratio=4.0, shape_hidden=64),
                optimizer=OptimizerConfig(lr=1e-4),
                schedule=ScheduleConfig(halve_every=40),
                batch_size=8,
                epochs=100,
            )
        raise ConfigurationError(f"Unknown profile '{name}', expected desk, minimal or full")
