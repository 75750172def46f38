"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int
    shapes: list[tuple[int, ...]] = field(default_factory=list)


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(
        np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8
    )


def _scalar(f: Callable[..., Tensor], inputs: Sequence[Tensor]) -> float:
    out = f(*inputs)
    if out.shape != ():
        raise ShapeError(f"grad_check: function must return a scalar, got shape {out.shape}")
    value = float(out.data)
    if not np.isfinite(value):
        raise NumericError("grad_check: non-finite function value")
    return value


def grad_check(
    f: Callable[..., Tensor],
    x: Tensor | Sequence[Tensor],
    eps: float = 1e-6,
    tol: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare ``backward`` gradients of scalar ``f(*x)`` with central differences.

    ``x`` may be one tensor or a list of tensors; every entry is treated as a
    differentiable input.  With ``max_coords`` set, at most that many randomly
    chosen coordinates per input are probed.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    inputs = [x] if isinstance(x, Tensor) else list(x)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = f(*inputs)
    if out.shape != ():
        raise ShapeError(f"grad_check: function must return a scalar, got shape {out.shape}")
    out.backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    n = 0
    for t, a in zip(inputs, analytic):
        coords = np.arange(t.size)
        if max_coords is not None and t.size > max_coords:
            coords = np.sort(rng.choice(t.size, size=max_coords, replace=False))
        for c in coords:
            pos = np.unravel_index(c, t.shape)
            orig = t.data[pos]
            t.data[pos] = orig + eps
            fp = _scalar(f, inputs)
            t.data[pos] = orig - eps
            fm = _scalar(f, inputs)
            t.data[pos] = orig
            numeric = (fp - fm) / (2 * eps)
            worst = max(worst, float(rel_err(a.reshape(-1)[c], numeric)))
            n += 1
    for t in inputs:
        t.grad = None
    return GradCheckReport(worst, worst < tol, n, [t.shape for t in inputs])
