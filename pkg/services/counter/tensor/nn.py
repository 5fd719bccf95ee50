"""
Parameter containers and the layers shared by encoder, relation learner and decoder.
"""

import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from errors import DataError
from tensor.autograd import Parameter, ShapeError, Tensor
from tensor.functional import conv2d, gelu, layer_norm, softmax


def normal_init(rng: np.random.Generator, shape: Tuple[int, ...], std: float) -> Parameter:
    return Parameter(rng.normal(0.0, std, size=shape))


class Module:
    """
    Owner of named parameters.

    Parameters are discovered from instance attributes: a Parameter, a nested
    Module, or a list of Modules. Names join with dots, list entries use their
    index, e.g. `encoder.layers.0.query.qkv.weight`.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, list):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{index}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise DataError(f"Checkpoint keys do not match model: missing={missing[:5]}, unexpected={unexpected[:5]}")
        for name, param in own.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise ShapeError(f"Checkpoint tensor '{name}' has shape {value.shape}, model expects {param.shape}")
            param.data = value.astype(param.data.dtype)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, std: float = 0.02):
        self.weight = normal_init(rng, (in_features, out_features), std)
        self.bias = Parameter(np.zeros(out_features))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, features: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(features))
        self.beta = Parameter(np.zeros(features))
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self._eps)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, std: float = 0.02):
        self.fc1 = Linear(dim, hidden, rng, std)
        self.fc2 = Linear(hidden, dim, rng, std)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class Conv2d(Module):
    def __init__(
        self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator, std: Optional[float] = None
    ):
        fan_in = in_channels * kernel_size * kernel_size
        if std is None:
            std = math.sqrt(2.0 / fan_in)
        self.weight = normal_init(rng, (out_channels, in_channels, kernel_size, kernel_size), std)
        self.bias = Parameter(np.zeros(out_channels))
        self._pad = (kernel_size - 1) // 2

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=1, pad=self._pad)


# ============================================================================
# ATTENTION
# ============================================================================

def split_heads(x: Tensor, heads: int) -> Tensor:
    """[n, C] -> [h, n, C/h]"""
    tokens, dim = x.shape
    if dim % heads:
        raise ShapeError(f"embedding dim {dim} is not divisible by {heads} heads")
    return x.reshape(tokens, heads, dim // heads).transpose(1, 0, 2)


def merge_heads(x: Tensor) -> Tensor:
    """[h, n, d] -> [n, h*d]"""
    heads, tokens, depth = x.shape
    return x.transpose(1, 0, 2).reshape(tokens, heads * depth)


def scaled_dot_product(q: Tensor, k: Tensor, v: Tensor) -> Tuple[Tensor, Tensor]:
    """Per-head attention; returns (output [h,a,d], weights [h,a,b])"""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention operands disagree: q {q.shape}, k {k.shape}, v {v.shape}")
    logits = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    weights = softmax(logits, axis=-1)
    return weights @ v, weights


class MultiHeadAttention(Module):
    """Standard MHA with separate Q/K/V/output projections"""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, std: float = 0.02):
        if dim % heads:
            raise ShapeError(f"embedding dim {dim} is not divisible by {heads} heads")
        self.q_proj = Linear(dim, dim, rng, std)
        self.k_proj = Linear(dim, dim, rng, std)
        self.v_proj = Linear(dim, dim, rng, std)
        self.out_proj = Linear(dim, dim, rng, std)
        self._heads = heads

    def attend(self, q_in: Tensor, k_in: Tensor, v_in: Tensor) -> Tuple[Tensor, Tensor]:
        if q_in.shape[-1] != k_in.shape[-1] or k_in.shape != v_in.shape:
            raise ShapeError(f"MHA inputs disagree: q {q_in.shape}, k {k_in.shape}, v {v_in.shape}")
        q = split_heads(self.q_proj(q_in), self._heads)
        k = split_heads(self.k_proj(k_in), self._heads)
        v = split_heads(self.v_proj(v_in), self._heads)
        out, weights = scaled_dot_product(q, k, v)
        return self.out_proj(merge_heads(out)), weights

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor) -> Tensor:
        return self.attend(q_in, k_in, v_in)[0]
