"""
==============================================================================
TENSOR AUTOGRAD CORE
==============================================================================
Dense numpy-backed tensors with reverse-mode automatic differentiation.

Every differentiable operation is a Function subclass: `forward` works on raw
arrays, `backward` maps the output adjoint to one adjoint per input. Calling
`Tensor.backward()` on a scalar records the tape (the operations that produced
it, in topological order) and replays it in reverse.
==============================================================================
"""

import threading
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ConfigurationError, CounterError, NumericError


class ShapeError(ConfigurationError, ValueError):
    """Raised when operand extents violate an operation's shape contract"""
    pass


class TapeError(CounterError):
    """Raised on an invalid backward pass"""
    pass


# ============================================================================
# GLOBAL STATE
# ============================================================================

_DTYPES = {"float64": np.float64, "float32": np.float32}
_default_dtype = np.float64
_local = threading.local()


def set_default_dtype(name: str) -> None:
    """Select the scalar type for newly created tensors ("float64" or "float32")"""
    global _default_dtype
    if name not in _DTYPES:
        raise ConfigurationError(f"Unsupported precision '{name}', expected one of {sorted(_DTYPES)}")
    _default_dtype = _DTYPES[name]


def get_default_dtype() -> type:
    return _default_dtype


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording in the current thread"""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


# ============================================================================
# TENSOR
# ============================================================================

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[Any]]


class Tensor:
    """
    Dense row-major array with optional participation in the gradient tape.

    Leaves created with `requires_grad=True` receive `.grad` (same shape as
    `.data`) when a downstream scalar is back-propagated. Gradients accumulate
    across backward passes until cleared.
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype: Optional[type] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.array(data, dtype=dtype or _default_dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._ctx: Optional["Function"] = None
        self._replayed = False

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = array
        out.requires_grad = requires_grad
        out.grad = None
        out._ctx = None
        out._replayed = False
        return out

    # --- introspection ---

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # --- backward ---

    def backward(self) -> None:
        """Populate `.grad` on every leaf that requires it"""
        if self.size != 1:
            raise TapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._replayed:
            raise TapeError("Tape already replayed for this loss; run a fresh forward pass")
        tape = Tape.record(self)
        tape.replay(np.ones_like(self.data))

    # --- arithmetic ---

    def __add__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(other, self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return MatMul.apply(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        return GetItem.apply(self, index=index)

    # --- reductions and structure ---

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape: Union[int, Sequence[int]]) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=tuple(shape))

    def transpose(self, *axes: int) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        return Transpose.apply(self, axes=tuple(axes))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(*axes)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def clip(self, low: float, high: float) -> "Tensor":
        return Clip.apply(self, low=low, high=high)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Parameter(Tensor):
    """Leaf tensor owned by a module and updated by the optimizer"""

    def __init__(self, data: ArrayLike, dtype: Optional[type] = None):
        super().__init__(data, requires_grad=True, dtype=dtype)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape})"


# ============================================================================
# TAPE
# ============================================================================

class Tape:
    """Ordered record of the operations that produced a root tensor"""

    def __init__(self, nodes: List[Tensor]):
        # inputs first, root last
        self.nodes = nodes

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            if node._replayed:
                raise TapeError("Graph contains a tape that was already replayed")
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    def replay(self, seed: np.ndarray) -> None:
        """Visit nodes in reverse topological order, pushing adjoints to inputs"""
        root = self.nodes[-1]
        pending: Dict[int, np.ndarray] = {id(root): seed}
        for node in reversed(self.nodes):
            grad = pending.pop(id(node), None)
            if node._ctx is None:
                if grad is not None and node.requires_grad:
                    grad = grad.astype(node.data.dtype, copy=False)
                    node.grad = np.array(grad) if node.grad is None else node.grad + grad
                continue
            node._replayed = True
            if grad is None:
                continue
            for parent, parent_grad in zip(node._ctx.parents, node._ctx.backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad


# ============================================================================
# FUNCTION BASE
# ============================================================================

def _check_finite(name: str, out: np.ndarray, inputs: Tuple[Tensor, ...]) -> None:
    if np.isfinite(out).all():
        return
    if all(np.isfinite(t.data).all() for t in inputs):
        raise NumericError(f"{name} produced non-finite values from finite inputs")


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast adjoint back down to an operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    """Base class for differentiable operations"""

    def __init__(self):
        self.parents: Tuple[Tensor, ...] = ()

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: ArrayLike, **kwargs: Any) -> Tensor:
        fn = cls()
        tensors = tuple(as_tensor(x) for x in inputs)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        _check_finite(cls.__name__, out, tensors)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        result = Tensor._wrap(out, requires_grad)
        if requires_grad:
            fn.parents = tensors
            result._ctx = fn
        return result


# ============================================================================
# ELEMENTWISE AND STRUCTURAL OPERATIONS
# ============================================================================

class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return unbroadcast(grad * self.b, self.a.shape), unbroadcast(grad * self.a, self.b.shape)


class Div(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        ga = grad / self.b
        gb = -grad * self.a / (self.b * self.b)
        return unbroadcast(ga, self.a.shape), unbroadcast(gb, self.b.shape)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Pow(Function):
    def forward(self, a, exponent: float):
        self.a, self.exponent = a, exponent
        return a ** exponent

    def backward(self, grad):
        return (grad * self.exponent * self.a ** (self.exponent - 1.0),)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        ga = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        gb = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return unbroadcast(ga, self.a.shape), unbroadcast(gb, self.b.shape)


class Sum(Function):
    def forward(self, a, axis=None, keepdims: bool = False):
        self.shape = a.shape
        if axis is None:
            self.axes = None
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            self.axes = tuple(ax % a.ndim for ax in axes)
        self.keepdims = keepdims
        return np.asarray(a.sum(axis=self.axes, keepdims=keepdims))

    def backward(self, grad):
        if self.axes is not None and not self.keepdims:
            for ax in sorted(self.axes):
                grad = np.expand_dims(grad, ax)
        return (np.broadcast_to(grad, self.shape),)


class Reshape(Function):
    def forward(self, a, shape):
        self.shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError as e:
            raise ShapeError(f"cannot reshape {a.shape} into {shape}: {e}")

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, a, axes):
        self.inverse = tuple(np.argsort(axes))
        return a.transpose(axes)

    def backward(self, grad):
        return (grad.transpose(self.inverse),)


class GetItem(Function):
    def forward(self, a, index):
        self.shape, self.dtype, self.index = a.shape, a.dtype, index
        return np.array(a[index])

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=self.dtype)
        np.add.at(full, self.index, grad)
        return (full,)


class Concat(Function):
    def forward(self, *arrays, axis: int = 0):
        self.axis = axis
        self.sizes = [arr.shape[axis] for arr in arrays]
        try:
            return np.concatenate(arrays, axis=axis)
        except ValueError as e:
            raise ShapeError(f"cannot concatenate {[arr.shape for arr in arrays]}: {e}")

    def backward(self, grad):
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, grad):
        return (grad / self.a,)


class Clip(Function):
    def forward(self, a, low: float, high: float):
        self.inside = (a >= low) & (a <= high)
        return np.clip(a, low, high)

    def backward(self, grad):
        return (grad * self.inside,)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)
