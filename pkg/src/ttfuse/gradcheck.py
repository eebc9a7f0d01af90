"""Central finite-difference check of backward gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

STEP = 1e-5
# Below this magnitude the error is measured absolutely.
FLOOR = 1e-3


@dataclass
class GradCheckResult:
    passed: bool
    worst_index: tuple | None
    worst_error: float
    analytic: float
    numeric: float

    def __bool__(self):
        return self.passed

    def report(self):
        state = "passed" if self.passed else "FAILED"
        return (f"grad check {state}: worst relative error {self.worst_error:.3e} at "
                f"{self.worst_index} (analytic {self.analytic:.6e}, numeric {self.numeric:.6e})")


def grad_check(fn, x, tolerance=1e-4, wrt=None):
    """Compare ``fn``'s backward gradient with central differences.

    ``fn`` maps ``x`` to a single-element tensor. By default the gradient is
    taken with respect to ``x``; pass ``wrt`` (a tensor used inside ``fn``)
    to check a different leaf, for example a layer weight.
    """
    target = x if wrt is None else wrt
    target.requires_grad = True
    target.grad = None
    out = fn(x)
    out.backward()
    analytic = np.zeros_like(target.data) if target.grad is None else target.grad.copy()
    target.grad = None

    numeric = np.empty_like(target.data)
    flat = target.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + STEP
        hi = float(fn(x).data.sum())
        flat[i] = orig - STEP
        lo = float(fn(x).data.sum())
        flat[i] = orig
        numeric.reshape(-1)[i] = (hi - lo) / (2.0 * STEP)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FLOOR)
    err = np.abs(analytic - numeric) / denom
    worst = np.unravel_index(int(np.argmax(err)), err.shape)
    worst_err = float(err[worst])
    return GradCheckResult(worst_err < tolerance, tuple(int(i) for i in worst), worst_err,
                           float(analytic[worst]), float(numeric[worst]))
