"""
Central finite-difference verification of tape gradients.
"""

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from tensor.autograd import Tensor


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    f: Callable[[], Tensor],
    x: Tensor,
    eps: float = 1e-6,
    indices: Optional[Sequence[int]] = None,
    floor: float = 1e-8,
) -> float:
    """
    Compare backward() against (f(x+eps) - f(x-eps)) / 2eps coordinate by coordinate.

    `f` rebuilds the scalar from scratch on every call and must read `x.data`.
    Returns the maximum relative error over the checked coordinates (all of
    them unless `indices` selects flat positions).
    """
    x.data = np.ascontiguousarray(x.data)
    x.grad = None
    loss = f()
    loss.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    positions: Iterable[int] = range(flat.size) if indices is None else indices
    worst = 0.0
    for i in positions:
        original = flat[i]
        flat[i] = original + eps
        upper = f().item()
        flat[i] = original - eps
        lower = f().item()
        flat[i] = original
        numeric = (upper - lower) / (2.0 * eps)
        worst = max(worst, relative_error(float(analytic.reshape(-1)[i]), numeric, floor))
    return worst
