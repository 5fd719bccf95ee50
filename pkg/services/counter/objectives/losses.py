"""
==============================================================================
TRAINING OBJECTIVES
==============================================================================
    L = L_count + lambda1 * L_aux + lambda2 * L_tbd

- L_count: squared error of the final density map, divided by the number of
  annotated objects in the mini-batch (at least 1)
- L_aux:   the same term summed over the intermediate maps
- L_tbd:   binary cross-entropy on alignment scores: tokens whose patch holds
  a GT point should not align with the background token, all others should
==============================================================================
"""

import math
from typing import List, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field

from errors import DataError
from models.config_models import LossWeights
from tensor.autograd import ShapeError, Tensor, as_tensor, concat

AS_CLAMP = 1e-12

MapBatch = Union[Tensor, Sequence[Tensor]]
TargetBatch = Union[Tensor, np.ndarray, Sequence[Union[Tensor, np.ndarray]]]


class TokenPartition(BaseModel):
    """Positive tokens hold at least one GT point; the rest are negative"""
    positive: List[int] = Field(default_factory=list)
    negative: List[int] = Field(default_factory=list)
    n_tokens: int

    @property
    def mask(self) -> np.ndarray:
        out = np.zeros(self.n_tokens)
        out[self.positive] = 1.0
        return out


# ============================================================================
# TOKEN PARTITION
# ============================================================================

def partition_tokens(points: Sequence[Tuple[float, float]], patch_size: int, grid: Tuple[int, int]) -> TokenPartition:
    rows, cols = grid
    height, width = rows * patch_size, cols * patch_size
    positive = set()
    for x, y in points:
        if not (0 <= x < width and 0 <= y < height):
            raise DataError(f"point ({x}, {y}) lies outside the {width}x{height} image")
        positive.add(int(math.floor(y / patch_size)) * cols + int(math.floor(x / patch_size)))
    n_tokens = rows * cols
    return TokenPartition(
        positive=sorted(positive),
        negative=[i for i in range(n_tokens) if i not in positive],
        n_tokens=n_tokens,
    )


# ============================================================================
# LOSSES
# ============================================================================

def tbd_loss(alignment: Union[Tensor, Sequence[Tensor]], partition: Union[TokenPartition, Sequence[TokenPartition]]) -> Tensor:
    """Mean over all tokens (of all samples when given lists) of the per-token BCE term"""
    if isinstance(partition, TokenPartition):
        alignment, partition = [alignment], [partition]
    alignment = [as_tensor(a) for a in alignment]
    if len(alignment) != len(partition):
        raise ShapeError(f"{len(alignment)} alignment vectors for {len(partition)} partitions")
    for scores, part in zip(alignment, partition):
        if scores.shape != (part.n_tokens,):
            raise ShapeError(f"alignment shape {scores.shape} does not match {part.n_tokens} tokens")
    scores = alignment[0] if len(alignment) == 1 else concat(alignment, axis=0)
    positive = np.concatenate([p.mask for p in partition])
    clamped = scores.clip(AS_CLAMP, 1.0 - AS_CLAMP)
    per_token = -((1.0 - clamped).log() * positive + clamped.log() * (1.0 - positive))
    return per_token.mean()


def _as_batch(maps: MapBatch) -> List[Tensor]:
    if isinstance(maps, (Tensor, np.ndarray)):
        return [as_tensor(maps)]
    return [as_tensor(m) for m in maps]


def squared_error(pred: MapBatch, target: TargetBatch) -> Tensor:
    preds, targets = _as_batch(pred), _as_batch(target)
    if len(preds) != len(targets):
        raise ShapeError(f"{len(preds)} predicted maps for {len(targets)} targets")
    total = None
    for p, t in zip(preds, targets):
        if p.shape != t.shape:
            raise ShapeError(f"density shapes disagree: {p.shape} vs {t.shape}")
        diff = p - t
        term = (diff * diff).sum()
        total = term if total is None else total + term
    return total


def count_loss(pred: MapBatch, target: TargetBatch, n_objects: float) -> Tensor:
    """||y - y_hat||^2 / max(n_objects, 1); lists are treated as a mini-batch"""
    if n_objects < 1:
        logger.debug(f"Object count {n_objects} clamped to 1")
    return squared_error(pred, target) * (1.0 / max(float(n_objects), 1.0))


def aux_loss(intermediates: Sequence[MapBatch], target: TargetBatch, n_objects: float) -> Tensor:
    total = Tensor(0.0)
    for maps in intermediates:
        total = total + count_loss(maps, target, n_objects)
    return total


def total_loss(
    count_l: Union[Tensor, float], aux_l: Union[Tensor, float], tbd_l: Union[Tensor, float], weights: LossWeights
) -> Union[Tensor, float]:
    return count_l + weights.lambda1 * aux_l + weights.lambda2 * tbd_l
