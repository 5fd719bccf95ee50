"""
==============================================================================
NEURAL OPERATIONS
==============================================================================
Differentiable operations the counting network is assembled from: softmax,
layer norm, activations, 2-D convolution, bilinear upsampling, grid pooling,
depth-wise correlation and the elementwise maximum over similarity maps.
==============================================================================
"""

import math
from typing import List, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from tensor.autograd import Function, MatMul, ShapeError, Tensor, as_tensor

LN2 = math.log(2.0)


# ============================================================================
# LINEAR ALGEBRA
# ============================================================================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


# ============================================================================
# NORMALIZATION AND ACTIVATIONS
# ============================================================================

class Softmax(Function):
    def forward(self, x, axis: int = -1):
        self.axis = axis
        shifted = x - np.max(x, axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        y = self.out
        return (y * (grad - (grad * y).sum(axis=self.axis, keepdims=True)),)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    return Softmax.apply(x, axis=axis)


class LayerNormOp(Function):
    def forward(self, x, gamma, beta, eps: float = 1e-5):
        if x.shape[-1] != gamma.shape[-1] or gamma.shape != beta.shape:
            raise ShapeError(f"layer_norm feature size mismatch: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        self.rstd = 1.0 / np.sqrt(var + eps)
        self.xhat = centered * self.rstd
        self.gamma = gamma
        return self.xhat * gamma + beta

    def backward(self, grad):
        features = self.xhat.shape[-1]
        flat_grad = grad.reshape(-1, features)
        dgamma = (flat_grad * self.xhat.reshape(-1, features)).sum(axis=0)
        dbeta = flat_grad.sum(axis=0)
        dxhat = grad * self.gamma
        dx = self.rstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - self.xhat * (dxhat * self.xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return LayerNormOp.apply(x, gamma, beta, eps=eps)


class Gelu(Function):
    """Tanh approximation of the Gaussian error linear unit"""
    K = math.sqrt(2.0 / math.pi)

    def forward(self, x):
        self.x = x
        self.t = np.tanh(self.K * (x + 0.044715 * x ** 3))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, grad):
        x, t = self.x, self.t
        inner = self.K * (1.0 + 3.0 * 0.044715 * x * x)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * inner),)


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(x)


class LeakyRelu(Function):
    def forward(self, x, slope: float = 0.01):
        self.positive = x > 0
        self.slope = slope
        return np.where(self.positive, x, slope * x)

    def backward(self, grad):
        return (grad * np.where(self.positive, 1.0, self.slope),)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    return LeakyRelu.apply(x, slope=slope)


class DensityRectifier(Function):
    """softplus(x) + softplus(-x) - 2 ln 2: smooth, non-negative, zero only at x = 0, slope tanh(x/2)"""

    def forward(self, x):
        self.x = x
        a = np.abs(x)
        # 2 ln cosh(x/2) is exact at 0; the log1p form avoids cosh overflow
        near = 2.0 * np.log(np.cosh(0.5 * np.minimum(a, 20.0)))
        far = a - 2.0 * LN2 + 2.0 * np.log1p(np.exp(-a))
        return np.where(a < 20.0, near, far)

    def backward(self, grad):
        return (grad * np.tanh(0.5 * self.x),)


def density_rectifier(x: Tensor) -> Tensor:
    return DensityRectifier.apply(x)


# ============================================================================
# CONVOLUTION AND RESAMPLING
# ============================================================================

class Conv2dOp(Function):
    def forward(self, x, weight, stride: int = 1, pad: int = 0):
        if x.ndim != 3 or weight.ndim != 4:
            raise ShapeError(f"conv2d expects x[C,H,W] and kernel[Co,Ci,k,k], got {x.shape} and {weight.shape}")
        channels, height, width = x.shape
        out_channels, in_channels, k, k2 = weight.shape
        if in_channels != channels or k != k2:
            raise ShapeError(f"conv2d kernel {weight.shape} incompatible with input {x.shape}")
        if k % 2 == 0:
            raise ShapeError(f"conv2d kernel size must be odd, got {k}")
        if pad < 0 or stride < 1:
            raise ShapeError(f"conv2d needs pad >= 0 and stride >= 1, got pad={pad}, stride={stride}")
        span_h, span_w = height + 2 * pad - k, width + 2 * pad - k
        if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
            raise ShapeError(
                f"conv2d output extent is not integral for input {x.shape}, k={k}, stride={stride}, pad={pad}"
            )
        out_h, out_w = span_h // stride + 1, span_w // stride + 1

        padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
        windows = sliding_window_view(padded, (k, k), axis=(1, 2))[:, ::stride, ::stride]
        self.cols = windows.transpose(1, 2, 0, 3, 4).reshape(out_h * out_w, channels * k * k)
        self.wmat = weight.reshape(out_channels, -1)
        self.meta = (x.shape, weight.shape, stride, pad, out_h, out_w, padded.shape)
        return (self.cols @ self.wmat.T).T.reshape(out_channels, out_h, out_w)

    def backward(self, grad):
        x_shape, w_shape, stride, pad, out_h, out_w, padded_shape = self.meta
        out_channels, channels, k, _ = w_shape
        g2 = grad.reshape(out_channels, out_h * out_w)
        dweight = (g2 @ self.cols).reshape(w_shape)
        dcols = (g2.T @ self.wmat).reshape(out_h, out_w, channels, k, k)
        dpadded = np.zeros(padded_shape, dtype=grad.dtype)
        for a in range(k):
            for b in range(k):
                dpadded[:, a:a + stride * out_h:stride, b:b + stride * out_w:stride] += (
                    dcols[:, :, :, a, b].transpose(2, 0, 1)
                )
        dx = dpadded[:, pad:pad + x_shape[1], pad:pad + x_shape[2]]
        return dx, dweight


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor = None, stride: int = 1, pad: int = 0) -> Tensor:
    out = Conv2dOp.apply(x, kernel, stride=stride, pad=pad)
    if bias is not None:
        out = out + bias.reshape(-1, 1, 1)
    return out


def interpolation_matrix(n_in: int, n_out: int) -> np.ndarray:
    """
    Rows of linear-interpolation weights mapping n_in samples onto n_out.

    Half-pixel (align-corners=false) convention: output sample i sits at
    source coordinate (i + 0.5) * n_in / n_out - 0.5, clamped to the edges.
    Every row sums to one.
    """
    scale = n_in / n_out
    matrix = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        matrix[i, i0] += 1.0 - lam
        matrix[i, i1] += lam
    return matrix


class Resample(Function):
    """x[C,H,W] -> A_h x A_w^T for fixed interpolation matrices"""

    def forward(self, x, rows: np.ndarray, cols: np.ndarray):
        self.rows, self.cols = rows.astype(x.dtype), cols.astype(x.dtype)
        return np.matmul(np.matmul(self.rows, x), self.cols.T)

    def backward(self, grad):
        return (np.matmul(np.matmul(self.rows.T, grad), self.cols),)


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    x = as_tensor(x)
    if factor < 1 or int(factor) != factor:
        raise ShapeError(f"upsampling factor must be an integer >= 1, got {factor}")
    if x.ndim != 3:
        raise ShapeError(f"bilinear_upsample expects x[C,H,W], got {x.shape}")
    if factor == 1:
        return x
    _, height, width = x.shape
    return Resample.apply(
        x, rows=interpolation_matrix(height, height * factor), cols=interpolation_matrix(width, width * factor)
    )


def pooling_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Adaptive average pooling weights: output i averages [floor(i*n/s), ceil((i+1)*n/s))"""
    matrix = np.zeros((n_out, n_in))
    for i in range(n_out):
        start = (i * n_in) // n_out
        stop = -((-(i + 1) * n_in) // n_out)
        matrix[i, start:stop] = 1.0 / (stop - start)
    return matrix


class GridPool(Function):
    """x[g,g,C] -> P x P^T per channel"""

    def forward(self, x, matrix: np.ndarray):
        self.matrix = matrix.astype(x.dtype)
        return np.einsum("ia,abc,jb->ijc", self.matrix, x, self.matrix)

    def backward(self, grad):
        return (np.einsum("ia,ijc,jb->abc", self.matrix, grad, self.matrix),)


def adaptive_avg_pool_grid(x: Tensor, size: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[0] != x.shape[1]:
        raise ShapeError(f"grid pooling expects a square token grid [g,g,C], got {x.shape}")
    if x.shape[0] == size:
        return x
    return GridPool.apply(x, matrix=pooling_matrix(x.shape[0], size))


# ============================================================================
# PROTOTYPE MATCHING PRIMITIVES
# ============================================================================

class DepthwiseCorrelate(Function):
    def forward(self, x, kernel):
        if x.ndim != 3 or kernel.ndim != 3:
            raise ShapeError(f"depthwise correlation expects x[C,h,w] and kernel[s,s,C], got {x.shape}, {kernel.shape}")
        s = kernel.shape[0]
        if kernel.shape[1] != s or kernel.shape[2] != x.shape[0]:
            raise ShapeError(f"kernel {kernel.shape} does not match feature map {x.shape}")
        if s % 2 == 0:
            raise ShapeError(f"prototype size must be odd, got {s}")
        pad = (s - 1) // 2
        _, height, width = x.shape
        padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
        self.windows = sliding_window_view(padded, (s, s), axis=(1, 2))
        self.kernel = kernel
        self.meta = (x.shape, padded.shape, pad)
        return np.einsum("chwab,abc->chw", self.windows, kernel)

    def backward(self, grad):
        x_shape, padded_shape, pad = self.meta
        s = self.kernel.shape[0]
        _, height, width = x_shape
        dkernel = np.einsum("chwab,chw->abc", self.windows, grad)
        dpadded = np.zeros(padded_shape, dtype=grad.dtype)
        for a in range(s):
            for b in range(s):
                dpadded[:, a:a + height, b:b + width] += grad * self.kernel[a, b, :][:, None, None]
        return dpadded[:, pad:pad + height, pad:pad + width], dkernel


def depthwise_correlate(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel cross-correlation of x[C,h,w] with kernel[s,s,C], zero padding (s-1)/2"""
    return DepthwiseCorrelate.apply(x, kernel)


class ElementwiseMax(Function):
    def forward(self, *maps):
        stacked = np.stack(maps, axis=0)
        # np.argmax keeps the first index on ties
        self.winner = np.argmax(stacked, axis=0)
        self.count = len(maps)
        return np.take_along_axis(stacked, self.winner[None], axis=0)[0]

    def backward(self, grad):
        return tuple(grad * (self.winner == i) for i in range(self.count))


def elementwise_max(maps: Sequence[Tensor]) -> Tensor:
    maps: List[Tensor] = list(maps)
    if not maps:
        raise ShapeError("elementwise_max needs at least one map")
    shapes = {m.shape for m in maps}
    if len(shapes) != 1:
        raise ShapeError(f"elementwise_max maps disagree in shape: {sorted(shapes)}")
    if len(maps) == 1:
        return maps[0]
    return ElementwiseMax.apply(*maps)
