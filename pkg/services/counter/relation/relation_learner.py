"""
==============================================================================
RELATION LEARNER
==============================================================================
Builds one object prototype per exemplar box and matches it against the
query token map.

    prototype_0 = shape_embedding(box w,h) + appearance_pooling(z_E_i)
    prototype_k = adapt_k(prototype_{k-1}, z_Q)        k = 1..K
    volume_k    = max_i depthwise_correlate(z_Q map, prototype_k[i]) / (s^2 sqrt(C))

Every adaptation iteration yields its own correlation volume; the last one
feeds the main decoder, the others feed auxiliary decoders.
==============================================================================
"""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from errors import DataError
from models.config_models import RelationConfig
from tensor.autograd import Parameter, ShapeError, Tensor, concat
from tensor.functional import adaptive_avg_pool_grid, depthwise_correlate, elementwise_max, gelu
from tensor.nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, normal_init


class PrototypeSet(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    prototypes: Tensor  # [n, s, s, C]
    iteration: int

    @property
    def n(self) -> int:
        return self.prototypes.shape[0]


class CorrelationVolume(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    response: Tensor  # [C, h, w]
    iteration: int


# ============================================================================
# PROTOTYPE EXTRACTION
# ============================================================================

def normalize_boxes(boxes: Sequence[Tuple[float, float]], image_size: Tuple[int, int]) -> np.ndarray:
    """(w, h) pixels -> (w / W, h / H)"""
    if not boxes:
        raise DataError("shape embedding needs at least one box")
    height, width = image_size
    sizes = np.asarray(boxes, dtype=np.float64).reshape(-1, 2)
    if (sizes <= 0).any():
        raise DataError(f"box sizes must be positive, got {sizes.tolist()}")
    return sizes / np.array([width, height], dtype=np.float64)


def broadcast_grid(vectors: Tensor, size: int) -> Tensor:
    """[n, C] -> [n, s, s, C]"""
    n, dim = vectors.shape
    return vectors.reshape(n, 1, 1, dim) * np.ones((1, size, size, 1))


class ShapeEmbedding(Module):
    """Small MLP from normalized box size to C dims"""

    def __init__(self, hidden: int, dim: int, rng: np.random.Generator, std: float = 0.02):
        self.fc1 = Linear(2, hidden, rng, std=1.0)
        self.fc2 = Linear(hidden, dim, rng, std)

    def __call__(self, boxes: Sequence[Tuple[float, float]], image_size: Tuple[int, int], size: int) -> Tensor:
        normalized = Tensor(normalize_boxes(boxes, image_size))
        return broadcast_grid(self.fc2(gelu(self.fc1(normalized))), size)


def shape_embedding(
    boxes: Sequence[Tuple[float, float]], image_size: Tuple[int, int], embedding: ShapeEmbedding, size: int
) -> Tensor:
    return embedding(boxes, image_size, size)


def appearance_pooling(z_e_i: Tensor, size: int) -> Tensor:
    """[N_i, C] exemplar tokens on a square grid -> [s, s, C]"""
    tokens, dim = z_e_i.shape
    side = math.isqrt(tokens)
    if side * side != tokens:
        raise ShapeError(f"exemplar token count {tokens} does not form a square grid")
    return adaptive_avg_pool_grid(z_e_i.reshape(side, side, dim), size)


# ============================================================================
# ITERATIVE ADAPTATION
# ============================================================================

class AdaptationLayer(Module):
    """Self-attention among prototype tokens, cross-attention to the query, feed-forward"""

    def __init__(self, dim: int, heads: int, hidden: int, rng: np.random.Generator, std: float = 0.02):
        self.self_norm = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, rng, std)
        self.cross_norm = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads, rng, std)
        self.ffn_norm = LayerNorm(dim)
        self.ffn = FeedForward(dim, hidden, rng, std)

    def __call__(self, tokens: Tensor, z_q: Tensor) -> Tensor:
        normed = self.self_norm(tokens)
        tokens = tokens + self.self_attn(normed, normed, normed)
        tokens = tokens + self.cross_attn(self.cross_norm(tokens), z_q, z_q)
        return tokens + self.ffn(self.ffn_norm(tokens))


def iterative_adaptation(
    shape_emb: Tensor, appearance_emb: Tensor, z_q: Tensor, layers: Sequence[AdaptationLayer]
) -> List[PrototypeSet]:
    if shape_emb.shape != appearance_emb.shape:
        raise ShapeError(f"shape embedding {shape_emb.shape} and appearance {appearance_emb.shape} disagree")
    if not layers:
        raise ShapeError("iterative adaptation needs at least one iteration")
    n, size, _, dim = shape_emb.shape
    tokens = (shape_emb + appearance_emb).reshape(n * size * size, dim)
    sets = []
    for k, layer in enumerate(layers, start=1):
        tokens = layer(tokens, z_q)
        sets.append(PrototypeSet(prototypes=tokens.reshape(n, size, size, dim), iteration=k))
    return sets


# ============================================================================
# PROTOTYPE MATCHING
# ============================================================================

def query_map(z_q: Tensor, grid: Tuple[int, int]) -> Tensor:
    """[h*w, C] tokens -> [C, h, w] feature map"""
    rows, cols = grid
    tokens, dim = z_q.shape
    if tokens != rows * cols:
        raise ShapeError(f"{tokens} query tokens do not fill a {rows}x{cols} grid")
    return z_q.reshape(rows, cols, dim).transpose(2, 0, 1)


def prototype_match(z_q_map: Tensor, prototypes: PrototypeSet, normalize: bool = True) -> CorrelationVolume:
    if prototypes.n == 0:
        raise ShapeError("prototype matching needs at least one prototype")
    kernels = prototypes.prototypes
    size, dim = kernels.shape[1], kernels.shape[3]
    scale = 1.0 / (size * size * math.sqrt(dim)) if normalize else 1.0
    maps = [depthwise_correlate(z_q_map, kernels[i]) * scale for i in range(prototypes.n)]
    return CorrelationVolume(response=elementwise_max(maps), iteration=prototypes.iteration)


class RelationLearner(Module):
    def __init__(self, config: RelationConfig, dim: int, rng: np.random.Generator, zero_shot: bool = False):
        self._config = config
        self._zero_shot = zero_shot
        hidden = max(1, int(round(dim * config.mlp_ratio)))
        # box shapes are unknown without exemplars
        self.shape_embed = None if zero_shot else ShapeEmbedding(config.shape_hidden, dim, rng)
        self.zero_shot_shape: Optional[Parameter] = normal_init(rng, (1, dim), 0.02) if zero_shot else None
        self.layers = [AdaptationLayer(dim, config.heads, hidden, rng) for _ in range(config.iterations)]

    def prototypes(
        self,
        z_q: Tensor,
        z_e: Tensor,
        n_exemplars: int,
        box_sizes: Sequence[Tuple[float, float]],
        image_size: Tuple[int, int],
    ) -> List[PrototypeSet]:
        size = self._config.prototype_size
        per_exemplar = z_e.shape[0] // n_exemplars
        pooled = [
            appearance_pooling(z_e[i * per_exemplar:(i + 1) * per_exemplar], size).reshape(1, size, size, -1)
            for i in range(n_exemplars)
        ]
        appearance = pooled[0] if n_exemplars == 1 else concat(pooled, axis=0)
        if self._zero_shot:
            shape = broadcast_grid(self.zero_shot_shape, size)
        else:
            if len(box_sizes) != n_exemplars:
                raise DataError(f"{len(box_sizes)} boxes given for {n_exemplars} exemplars")
            shape = shape_embedding(box_sizes, image_size, self.shape_embed, size)
        return iterative_adaptation(shape, appearance, z_q, self.layers)

    def __call__(
        self,
        z_q: Tensor,
        z_e: Tensor,
        n_exemplars: int,
        box_sizes: Sequence[Tuple[float, float]],
        image_size: Tuple[int, int],
        grid: Tuple[int, int],
    ) -> List[CorrelationVolume]:
        sets = self.prototypes(z_q, z_e, n_exemplars, box_sizes, image_size)
        feature_map = query_map(z_q, grid)
        return [prototype_match(feature_map, prototype_set) for prototype_set in sets]
