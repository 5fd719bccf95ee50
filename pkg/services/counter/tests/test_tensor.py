"""
Tests for the tensor core: operations, oracles, tape and finite-difference checks
"""

import math

import numpy as np
import pytest

from errors import NumericError
from tensor.autograd import Parameter, ShapeError, TapeError, Tensor, concat, no_grad
from tensor.functional import (
    adaptive_avg_pool_grid,
    bilinear_upsample,
    conv2d,
    density_rectifier,
    elementwise_max,
    gelu,
    layer_norm,
    leaky_relu,
    matmul,
    softmax,
)
from tensor.gradcheck import grad_check, relative_error
from tensor.serialization import TensorFormatError, load_archive, load_tensor, save_archive, save_tensor


def weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return (out * Tensor(weights)).sum()


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def naive_conv(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    channels, height, width = x.shape
    out_channels, _, k, _ = w.shape
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out_h = (height + 2 * pad - k) // stride + 1
    out_w = (width + 2 * pad - k) // stride + 1
    out = np.zeros((out_channels, out_h, out_w))
    for o in range(out_channels):
        for i in range(out_h):
            for j in range(out_w):
                for c in range(channels):
                    for a in range(k):
                        for b in range(k):
                            out[o, i, j] += w[o, c, a, b] * padded[c, i * stride + a, j * stride + b]
    return out


class TestMatmul:

    def test_identity(self, rng):
        """I2 @ X returns X"""
        x = rng.normal(size=(2, 3))
        assert np.array_equal(matmul(Tensor(np.eye(2)), Tensor(x)).data, x)

    def test_analytic(self):
        """[[1,2],[3,4]] @ [[1],[1]] = [[3],[7]]"""
        out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[1.0], [1.0]])
        assert out.data.tolist() == [[3.0], [7.0]]

    def test_loop_oracle(self, rng):
        """Random shapes up to 8 agree with the triple loop"""
        for _ in range(100):
            m, k, n = rng.integers(1, 9, size=3)
            a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
            assert np.max(np.abs(matmul(Tensor(a), Tensor(b)).data - naive_matmul(a, b))) < 1e-10

    def test_inner_mismatch(self):
        """Disagreeing inner extents raise ShapeError"""
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

    def test_adjoints(self, rng):
        """dA = dC B^T and dB = A^T dC"""
        a = Tensor(rng.normal(size=(5, 7)), requires_grad=True)
        b = Tensor(rng.normal(size=(7, 3)), requires_grad=True)
        upstream = rng.normal(size=(5, 3))
        weighted_sum(a @ b, upstream).backward()
        assert np.allclose(a.grad, upstream @ b.data.T)
        assert np.allclose(b.grad, a.data.T @ upstream)


class TestSoftmax:

    def test_symmetric(self):
        """[1, 1] gives [0.5, 0.5]"""
        assert softmax(Tensor([1.0, 1.0])).data.tolist() == [0.5, 0.5]

    def test_analytic(self):
        """[0, ln 3] gives [0.25, 0.75]"""
        out = softmax(Tensor([0.0, math.log(3.0)])).data
        assert np.allclose(out, [0.25, 0.75], atol=1e-12)

    def test_large_logits_are_stable(self):
        """[1000, 1000] gives [0.5, 0.5] without overflow"""
        out = softmax(Tensor([1000.0, 1000.0])).data
        assert out.tolist() == [0.5, 0.5]

    def test_rows_sum_to_one(self, rng):
        """Rows are strictly positive and sum to one"""
        out = softmax(Tensor(rng.normal(scale=5.0, size=(6, 9))), axis=-1).data
        assert np.all(out > 0)
        assert np.max(np.abs(out.sum(axis=-1) - 1.0)) < 1e-9

    def test_invalid_axis(self):
        """An axis outside the rank raises ShapeError"""
        with pytest.raises(ShapeError):
            softmax(Tensor(np.ones((2, 2))), axis=2)

    def test_pick_gradient(self, rng):
        """Softmax-then-pick passes the finite-difference check"""
        x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        error = grad_check(lambda: softmax(x, axis=-1)[1, 2] * 3.0, x)
        assert error < 1e-6


class TestLayerNorm:

    def test_constant_token(self):
        """A constant token normalizes to zeros"""
        out = layer_norm(Tensor([[2.0, 2.0, 2.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        assert np.allclose(out.data, 0.0)

    def test_two_values(self):
        """[1, 3] normalizes to [-1, 1] as eps vanishes"""
        out = layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
        assert np.allclose(out.data, [-1.0, 1.0], atol=1e-9)

    def test_feature_mismatch(self):
        """gamma with the wrong width raises ShapeError"""
        with pytest.raises(ShapeError):
            layer_norm(Tensor(np.ones((2, 3))), Tensor(np.ones(4)), Tensor(np.zeros(4)))

    def test_gradients(self, rng):
        """Input, gamma and beta gradients match central differences"""
        x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        gamma = Tensor(rng.normal(size=5), requires_grad=True)
        beta = Tensor(rng.normal(size=5), requires_grad=True)
        upstream = rng.normal(size=(4, 5))

        def f():
            return weighted_sum(layer_norm(x, gamma, beta), upstream)

        for leaf in (x, gamma, beta):
            assert grad_check(f, leaf, floor=1e-2) < 1e-6


class TestConv2d:

    def test_unit_kernel_is_identity(self, rng):
        """A 1x1 kernel of value 1 reproduces the input"""
        x = rng.normal(size=(1, 5, 6))
        out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
        assert np.array_equal(out.data, x)

    def test_box_kernel_interior(self):
        """3x3 ones over a constant map gives 9v in the interior"""
        out = conv2d(Tensor(np.full((1, 5, 5), 2.0)), Tensor(np.ones((1, 1, 3, 3))), pad=1).data
        assert np.allclose(out[0, 1:-1, 1:-1], 18.0)
        assert out[0, 0, 0] == pytest.approx(8.0)

    def test_loop_oracle(self, rng):
        """Random convolutions agree with the six-loop oracle"""
        for _ in range(100):
            channels, out_channels = rng.integers(1, 4, size=2)
            k = int(rng.choice([1, 3, 5]))
            stride = int(rng.choice([1, 2]))
            pad = (k - 1) // 2
            size = int(rng.integers(k, 9))
            if (size + 2 * pad - k) % stride:
                size += 1
            x = rng.normal(size=(channels, size, size))
            w = rng.normal(size=(out_channels, channels, k, k))
            out = conv2d(Tensor(x), Tensor(w), stride=stride, pad=pad).data
            assert np.max(np.abs(out - naive_conv(x, w, stride, pad))) < 1e-10

    def test_non_integral_extent(self):
        """A stride that does not tile the input raises ShapeError"""
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.ones((1, 6, 6))), Tensor(np.ones((1, 1, 3, 3))), stride=2, pad=0)

    def test_even_kernel(self):
        """Even kernel sizes are rejected"""
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.ones((1, 6, 6))), Tensor(np.ones((1, 1, 2, 2))))

    def test_gradients(self, rng):
        """Input, kernel and bias gradients match central differences"""
        x = Tensor(rng.normal(size=(2, 7, 7)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        bias = Tensor(rng.normal(size=3), requires_grad=True)
        upstream = rng.normal(size=(3, 4, 4))

        def f():
            return weighted_sum(conv2d(x, w, bias, stride=2, pad=1), upstream)

        for leaf in (x, w, bias):
            assert grad_check(f, leaf, floor=1e-2) < 1e-5


class TestBilinearUpsample:

    def test_factor_one(self, rng):
        """Factor 1 is the identity"""
        x = rng.normal(size=(2, 3, 3))
        assert np.array_equal(bilinear_upsample(Tensor(x), 1).data, x)

    def test_constant_map(self):
        """A constant map stays constant and its mass scales by 4"""
        out = bilinear_upsample(Tensor(np.full((1, 3, 4), 1.5)), 2).data
        assert out.shape == (1, 6, 8)
        assert np.allclose(out, 1.5)
        assert out.sum() == pytest.approx(4 * 1.5 * 12)

    def test_ramp(self):
        """A 2x2 ramp follows the half-pixel interpolation formula"""
        out = bilinear_upsample(Tensor([[[0.0, 1.0], [2.0, 3.0]]]), 2).data[0]
        weights = np.array([0.0, 0.25, 0.75, 1.0])
        assert np.allclose(out, 2.0 * weights[:, None] + weights[None, :])

    def test_bad_factor(self):
        """Factors below one raise ShapeError"""
        with pytest.raises(ShapeError):
            bilinear_upsample(Tensor(np.ones((1, 2, 2))), 0)

    def test_gradients(self, rng):
        """Upsampling passes the finite-difference check"""
        x = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
        upstream = rng.normal(size=(2, 6, 6))
        assert grad_check(lambda: weighted_sum(bilinear_upsample(x, 2), upstream), x, floor=1e-2) < 1e-5


class TestBackward:

    def test_sum_gives_ones(self, rng):
        """d sum(x) / dx = 1"""
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        x.sum().backward()
        assert np.array_equal(x.grad, np.ones((3, 4)))

    def test_half_square(self, rng):
        """d sum(x*x)/2 / dx = x"""
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        ((x * x).sum() / 2.0).backward()
        assert np.allclose(x.grad, x.data)

    def test_non_scalar_loss(self):
        """backward on a non-scalar raises TapeError"""
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(TapeError):
            (x * 2.0).backward()

    def test_repeated_backward(self):
        """Replaying the same tape twice raises TapeError"""
        x = Tensor(np.ones(3), requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        with pytest.raises(TapeError):
            loss.backward()

    def test_shared_subexpression(self, rng):
        """Gradients accumulate over every path through a reused node"""
        x = Tensor(rng.normal(size=4), requires_grad=True)
        y = x * 3.0
        (y * y + y).sum().backward()
        assert np.allclose(x.grad, 18.0 * x.data + 3.0)

    def test_no_grad(self):
        """Operations under no_grad record nothing"""
        x = Parameter(np.ones(2))
        with no_grad():
            y = (x * 2.0).sum()
        assert not y.requires_grad
        assert y.is_leaf

    def test_nonfinite_forward(self):
        """log(0) from finite input raises NumericError"""
        with np.errstate(divide="ignore"):
            with pytest.raises(NumericError):
                Tensor([0.0, 1.0]).log()


class TestDensityRectifier:

    def test_values(self):
        """Zero maps to zero and both signs map to 2 ln cosh(x/2)"""
        y = density_rectifier(Tensor([-2.0, 0.0, 2.0]))
        expected = 2.0 * math.log(math.cosh(1.0))
        assert y.data[1] == 0.0
        assert abs(y.data[0] - expected) < 1e-12
        assert abs(y.data[2] - expected) < 1e-12

    def test_gradient_alive_below_zero(self):
        """Negative inputs keep a non-zero gradient of tanh(x/2)"""
        x = Tensor(np.array([-3.0, -0.5, -1e-3]), requires_grad=True)
        density_rectifier(x).sum().backward()
        assert np.all(x.grad < 0.0)
        assert np.allclose(x.grad, np.tanh(0.5 * x.data), atol=1e-15)

    def test_non_negative_near_zero(self):
        """Inputs within round-off of zero never produce negative density"""
        y = density_rectifier(Tensor(np.linspace(-1e-8, 1e-8, 101)))
        assert np.all(y.data >= 0.0)


class TestRelativeError:

    def test_plain_above_floor(self):
        """Gradients at or above the floor are compared by plain relative error"""
        assert relative_error(2.0, 2.0001, floor=1e-3) == pytest.approx(1e-4 / 2.0001, rel=1e-9)
        assert relative_error(-1e-3, -1.05e-3, floor=1e-3) == pytest.approx(0.05 / 1.05, rel=1e-9)

    def test_floor_bounds_tiny_gradients(self):
        """Below the floor the difference is measured against the floor itself"""
        assert relative_error(1e-9, 3e-9, floor=1e-3) == pytest.approx(2e-6, rel=1e-9)


class TestOperationGradients:

    @pytest.mark.parametrize(
        "op",
        [
            lambda x: gelu(x),
            lambda x: leaky_relu(x, 0.1),
            lambda x: density_rectifier(x),
            lambda x: x.exp(),
            lambda x: (x * x + 1.0).log(),
            lambda x: 1.0 / (x * x + 1.0),
            lambda x: (x * x + 0.5) ** 1.5,
            lambda x: x.mean(axis=0, keepdims=True) - x,
            lambda x: x.reshape(-1)[2:7],
            lambda x: concat([x, x * 2.0], axis=1),
            lambda x: x.swapaxes(0, 1) @ x,
        ],
    )
    def test_elementwise_and_structural(self, rng, op):
        """Each operation's tape gradient matches central differences"""
        data = rng.normal(size=(4, 4))
        # keep clear of activation kinks
        data = np.where(np.abs(data) < 0.1, 0.3, data)
        x = Tensor(data, requires_grad=True)
        upstream = rng.normal(size=op(Tensor(data)).shape)
        assert grad_check(lambda: weighted_sum(op(x), upstream), x, floor=1e-2) < 1e-5

    def test_grid_pool(self, rng):
        """Adaptive grid pooling passes the finite-difference check"""
        x = Tensor(rng.normal(size=(5, 5, 3)), requires_grad=True)
        upstream = rng.normal(size=(3, 3, 3))
        assert grad_check(lambda: weighted_sum(adaptive_avg_pool_grid(x, 3), upstream), x, floor=1e-2) < 1e-5

    def test_elementwise_max(self, rng):
        """The maximum routes its gradient to the winning map"""
        a = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        b = Tensor(a.data + np.where(rng.random((3, 3)) < 0.5, 1.0, -1.0), requires_grad=True)
        upstream = rng.normal(size=(3, 3))
        weighted_sum(elementwise_max([a, b]), upstream).backward()
        assert np.allclose(a.grad + b.grad, upstream)
        assert np.allclose(b.grad, upstream * (b.data > a.data))

    def test_grad_check_on_sum(self, rng):
        """grad_check reports no error for a plain sum"""
        x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        assert grad_check(lambda: x.sum(), x) < 1e-8


class TestSerialization:

    def test_tensor_file(self, tmp_path, rng):
        """A saved tensor reloads bit for bit"""
        array = rng.normal(size=(2, 3, 4))
        save_tensor(tmp_path / "x.mtnsr", array)
        assert np.array_equal(load_tensor(tmp_path / "x.mtnsr"), array)
        assert (tmp_path / "x.mtnsr").read_bytes()[:6] == b"MTNSR1"

    def test_archive(self, tmp_path, rng):
        """Archives keep names, order and values"""
        tensors = {"encoder.w": rng.normal(size=(3, 2)), "bias": np.zeros(4), "scalar": np.array(2.5)}
        save_archive(tmp_path / "a.mtnsra", tensors)
        loaded = load_archive(tmp_path / "a.mtnsra")
        assert list(loaded) == list(tensors)
        for name, array in tensors.items():
            assert np.array_equal(loaded[name], array)

    def test_bad_magic(self, tmp_path):
        """A wrong magic raises TensorFormatError"""
        (tmp_path / "bad.mtnsr").write_bytes(b"NOPE00" + b"\x00" * 12)
        with pytest.raises(TensorFormatError):
            load_tensor(tmp_path / "bad.mtnsr")

    def test_truncated(self, tmp_path):
        """A short payload raises TensorFormatError"""
        save_tensor(tmp_path / "x.mtnsr", np.ones((4, 4)))
        data = (tmp_path / "x.mtnsr").read_bytes()
        (tmp_path / "x.mtnsr").write_bytes(data[:-8])
        with pytest.raises(TensorFormatError):
            load_tensor(tmp_path / "x.mtnsr")
