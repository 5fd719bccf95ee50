"""
==============================================================================
MUTUAL RELATION ENCODER
==============================================================================
Turns a query image and its exemplar crops into two token streams that are
aware of each other.

Each layer runs, per stream, self-attention plus co-attention onto the other
stream, and adds both to the residual:

    z_Q      <- z_Q      + s_Q      + c_[E;B]->Q
    [z_E;z_B] <- [z_E;z_B] + s_[E;B] + c_Q->[E;B]

followed by a pre-norm feed-forward block. z_B is a single learnable
background token living on the exemplar side. The share of each query
token's co-attention that lands on z_B is its alignment score (AS).

Switches:
- mrm off: no co-attention, both streams pass through one shared stack
- bt off:  no background token, no alignment scores
==============================================================================
"""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict

from errors import ConfigurationError
from models.config_models import AblationVariant, EncoderConfig
from tensor.autograd import ShapeError, Tensor, as_tensor, concat
from tensor.functional import softmax
from tensor.nn import FeedForward, LayerNorm, Linear, Module, merge_heads, normal_init, scaled_dot_product, split_heads


class TokenState(BaseModel):
    """Token streams between layers; z_b is None when the background token is disabled"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    z_q: Tensor
    z_e: Tensor
    z_b: Optional[Tensor] = None
    layer: int = 0

    @property
    def exemplar_side(self) -> Tensor:
        return self.z_e if self.z_b is None else concat([self.z_e, self.z_b], axis=0)


class EncoderOutput(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    z_q: Tensor
    z_e: Tensor
    alignment_layers: List[Tensor]
    n_exemplars: int
    tokens_per_exemplar: int

    @property
    def alignment(self) -> Optional[Tensor]:
        """Alignment scores averaged over layers, None without a background token or layers"""
        if not self.alignment_layers:
            return None
        total = self.alignment_layers[0]
        for scores in self.alignment_layers[1:]:
            total = total + scores
        return total * (1.0 / len(self.alignment_layers))


# ============================================================================
# PATCHES AND EMBEDDINGS
# ============================================================================

def patchify(image: Tensor, patch_size: int) -> Tensor:
    """[3,H,W] -> [N, 3*S*S], patches row-major, channel-major inside a patch"""
    image = as_tensor(image)
    if image.ndim != 3:
        raise ShapeError(f"patchify expects [C,H,W], got {image.shape}")
    channels, height, width = image.shape
    if height % patch_size or width % patch_size:
        raise ShapeError(f"image {height}x{width} is not divisible by patch size {patch_size}")
    rows, cols = height // patch_size, width // patch_size
    return (
        image.reshape(channels, rows, patch_size, cols, patch_size)
        .transpose(1, 3, 0, 2, 4)
        .reshape(rows * cols, channels * patch_size * patch_size)
    )


def embed(patches: Tensor, projection: Linear, position_table: Tensor) -> Tensor:
    tokens = projection(patches)
    if tokens.shape != position_table.shape:
        raise ShapeError(f"position table {position_table.shape} does not match tokens {tokens.shape}")
    return tokens + position_table


# ============================================================================
# ALIGNMENT SCORES
# ============================================================================

def alignment_from_weights(weights: Tensor, n_background: int = 1) -> Tensor:
    """Attention mass on the trailing background keys, averaged over heads: [h,a,b] -> [a]"""
    if weights.shape[-1] <= n_background:
        raise ShapeError("alignment needs at least one exemplar key besides the background keys")
    background_mass = weights[..., weights.shape[-1] - n_background:].sum(axis=-1)
    if background_mass.ndim == 1:
        return background_mass
    return background_mass.mean(axis=0)


def alignment_from_logits(logits: Tensor, n_background: int = 1) -> Tensor:
    return alignment_from_weights(softmax(as_tensor(logits), axis=-1), n_background)


def alignment_scores(q_q: Tensor, k_e: Tensor, k_b: Tensor, scale: Optional[float] = None) -> Tensor:
    """
    AS_i = sum_j exp(q_i . kB_j) / sum_j exp(q_i . [kE; kB]_j), mean over heads.

    Operands are [h, n, d] per head, or [n, d] for a single head.
    """
    q_q, k_e, k_b = as_tensor(q_q), as_tensor(k_e), as_tensor(k_b)
    if k_e.shape[-2] == 0:
        raise ShapeError("alignment scores need a non-empty exemplar key set")
    if not (q_q.shape[-1] == k_e.shape[-1] == k_b.shape[-1]):
        raise ShapeError(f"key/query depth mismatch: {q_q.shape}, {k_e.shape}, {k_b.shape}")
    keys = concat([k_e, k_b], axis=-2)
    if scale is None:
        scale = 1.0 / math.sqrt(q_q.shape[-1])
    logits = (q_q @ keys.swapaxes(-1, -2)) * scale
    return alignment_from_logits(logits, k_b.shape[-2])


# ============================================================================
# LAYERS
# ============================================================================

class StreamBranch(Module):
    """Parameters of one stream inside an encoder layer"""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, mutual: bool, std: float, eps: float):
        self.norm = LayerNorm(dim, eps)
        self.qkv = Linear(dim, 3 * dim, rng, std)
        self.self_out = Linear(dim, dim, rng, std)
        self.cross_out = Linear(dim, dim, rng, std) if mutual else None
        self.ffn_norm = LayerNorm(dim, eps)
        self.ffn = FeedForward(dim, hidden, rng, std)

    def project(self, z: Tensor, heads: int) -> Tuple[Tensor, Tensor, Tensor]:
        dim = z.shape[-1]
        qkv = self.qkv(self.norm(z))
        return (
            split_heads(qkv[:, :dim], heads),
            split_heads(qkv[:, dim:2 * dim], heads),
            split_heads(qkv[:, 2 * dim:], heads),
        )

    def feed_forward(self, z: Tensor) -> Tensor:
        return z + self.ffn(self.ffn_norm(z))


class MRMLayer(Module):
    def __init__(self, config: EncoderConfig, ablation: AblationVariant, rng: np.random.Generator):
        dim, hidden = config.embed_dim, config.ffn_hidden
        self.query = StreamBranch(dim, hidden, rng, ablation.mrm, config.init_std, config.ln_eps)
        # the no-MRM baseline extracts both streams with one shared stack
        self.exemplar = (
            StreamBranch(dim, hidden, rng, True, config.init_std, config.ln_eps) if ablation.mrm else None
        )
        self._heads = config.heads
        self._mutual = ablation.mrm

    def __call__(self, state: TokenState) -> Tuple[TokenState, Optional[Tensor]]:
        exemplar_branch = self.exemplar if self.exemplar is not None else self.query
        z_q = state.z_q
        z_x = state.exemplar_side

        q_q, k_q, v_q = self.query.project(z_q, self._heads)
        q_x, k_x, v_x = exemplar_branch.project(z_x, self._heads)

        s_q, _ = scaled_dot_product(q_q, k_q, v_q)
        s_x, _ = scaled_dot_product(q_x, k_x, v_x)
        update_q = self.query.self_out(merge_heads(s_q))
        update_x = exemplar_branch.self_out(merge_heads(s_x))

        alignment = None
        if self._mutual:
            c_xq, weights = scaled_dot_product(q_q, k_x, v_x)
            c_qx, _ = scaled_dot_product(q_x, k_q, v_q)
            update_q = update_q + self.query.cross_out(merge_heads(c_xq))
            update_x = update_x + exemplar_branch.cross_out(merge_heads(c_qx))
            if state.z_b is not None:
                alignment = alignment_from_weights(weights, state.z_b.shape[0])

        z_q = self.query.feed_forward(z_q + update_q)
        z_x = exemplar_branch.feed_forward(z_x + update_x)

        n_e = state.z_e.shape[0]
        next_state = TokenState(
            z_q=z_q,
            z_e=z_x[:n_e],
            z_b=None if state.z_b is None else z_x[n_e:],
            layer=state.layer + 1,
        )
        return next_state, alignment


def mrm_layer(state: TokenState, layer: MRMLayer) -> Tuple[TokenState, Optional[Tensor]]:
    return layer(state)


# ============================================================================
# ENCODER
# ============================================================================

class MRMEncoder(Module):
    """
    Patch embedding, L mutual relation layers and the final layer norms.

    Parameter names: patch_embed.*, query_pos, exemplar_pos, background,
    zero_shot_tokens, layers.<i>.{query,exemplar}.<sublayer>.<matrix>,
    query_norm.*, exemplar_norm.*
    """

    def __init__(self, config: EncoderConfig, ablation: AblationVariant, rng: np.random.Generator):
        self._config = config
        self._ablation = ablation
        dim, std, patch = config.embed_dim, config.init_std, config.patch_size

        self.patch_embed = Linear(3 * patch * patch, dim, rng, std)
        self.query_pos = normal_init(rng, (config.query_tokens, dim), std)
        # one table shared by every exemplar keeps the encoder exemplar-order equivariant
        self.exemplar_pos = normal_init(rng, (config.tokens_per_exemplar, dim), std)
        self.background = normal_init(rng, (1, dim), std) if ablation.bt else None
        self.zero_shot_tokens = (
            normal_init(rng, (config.tokens_per_exemplar, dim), std) if config.zero_shot else None
        )
        self.layers = [MRMLayer(config, ablation, rng) for _ in range(config.layers)]
        self.query_norm = LayerNorm(dim, config.ln_eps) if config.layers else None
        self.exemplar_norm = LayerNorm(dim, config.ln_eps) if config.layers else None

    def _check_image(self, image: Tensor, expected: Tuple[int, int], label: str) -> None:
        if image.shape != (3, expected[0], expected[1]):
            raise ShapeError(f"{label} image has shape {image.shape}, expected (3, {expected[0]}, {expected[1]})")

    def embed_exemplars(self, exemplars: Sequence[Tensor]) -> Tuple[Tensor, int]:
        cfg = self._config
        if cfg.zero_shot:
            return self.zero_shot_tokens, 1
        if not exemplars:
            raise ConfigurationError("no exemplars given and zero_shot is disabled")
        tokens = []
        for image in exemplars:
            image = as_tensor(image)
            self._check_image(image, cfg.exemplar_size, "exemplar")
            tokens.append(embed(patchify(image, cfg.patch_size), self.patch_embed, self.exemplar_pos))
        return (tokens[0] if len(tokens) == 1 else concat(tokens, axis=0)), len(tokens)

    def __call__(self, query: Tensor, exemplars: Sequence[Tensor]) -> EncoderOutput:
        cfg = self._config
        query = as_tensor(query)
        self._check_image(query, cfg.query_size, "query")
        z_q = embed(patchify(query, cfg.patch_size), self.patch_embed, self.query_pos)
        z_e, n_exemplars = self.embed_exemplars(exemplars)

        state = TokenState(z_q=z_q, z_e=z_e, z_b=self.background)
        alignment_layers: List[Tensor] = []
        for layer in self.layers:
            state, alignment = mrm_layer(state, layer)
            if alignment is not None:
                alignment_layers.append(alignment)

        z_q, z_e = state.z_q, state.z_e
        if self.query_norm is not None:
            z_q = self.query_norm(z_q)
            z_e = self.exemplar_norm(z_e)
        logger.debug(f"Encoded {z_q.shape[0]} query and {z_e.shape[0]} exemplar tokens over {len(self.layers)} layers")
        return EncoderOutput(
            z_q=z_q,
            z_e=z_e,
            alignment_layers=alignment_layers,
            n_exemplars=n_exemplars,
            tokens_per_exemplar=cfg.tokens_per_exemplar,
        )


def encode(
    query: Tensor, exemplars: Sequence[Tensor], encoder: MRMEncoder
) -> Tuple[Tensor, Tensor, List[Tensor]]:
    out = encoder(query, exemplars)
    return out.z_q, out.z_e, out.alignment_layers
