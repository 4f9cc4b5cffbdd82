"""Damped Newton minimization with a gradient-descent fallback."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .errors import NoConvergence

Objective = Callable[[NDArray[np.float64]], tuple[float, NDArray[np.float64], NDArray[np.float64]]]

ARMIJO_C = 1e-4
MAX_HALVINGS = 30
STALL_GRAD_RTOL = 1e-8


@dataclass
class OptimResult:
    x: NDArray[np.float64]
    value: float
    grad: NDArray[np.float64]
    iterations: int
    converged: bool
    trace: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


def _newton_direction(grad: NDArray, hess: NDArray) -> NDArray | None:
    try:
        L = np.linalg.cholesky(hess)
    except np.linalg.LinAlgError:
        return None
    d = -np.linalg.solve(L.T, np.linalg.solve(L, grad))
    if not np.all(np.isfinite(d)) or grad @ d >= 0:
        return None
    return d


def _line_search(fun: Objective, x, f, g, d):
    slope = float(g @ d)
    gnorm = np.max(np.abs(g))
    t = 1.0
    for _ in range(MAX_HALVINGS + 1):
        x_new = x + t * d
        f_new, g_new, h_new = fun(x_new)
        if np.isfinite(f_new):
            if f_new <= f + ARMIJO_C * t * slope:
                return x_new, f_new, g_new, h_new
            # near the optimum the decrease drowns in rounding; accept if the gradient shrinks
            if abs(f_new - f) <= 1e-13 * (1.0 + abs(f)) and np.max(np.abs(g_new)) < gnorm:
                return x_new, f_new, g_new, h_new
        t *= 0.5
    return None


def newton_minimize(
    fun: Objective,
    x0: NDArray[np.float64],
    tol: float = 1e-9,
    max_iter: int = 200,
) -> OptimResult:
    """Minimize ``fun`` (returning value, gradient, Hessian) from ``x0``.

    Newton steps with step halving (at most 30 halvings); when the Hessian is
    not positive definite or the Newton step does not descend, the negative
    gradient is used instead. Stops once the gradient sup-norm is <= ``tol``.
    A stall is accepted as convergence when the gradient is below
    ``1e-8 * (1 + |value|)``.

    Raises:
        NoConvergence: with the best iterate as ``best`` after ``max_iter``
            iterations or an unrecoverable stall.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g, H = fun(x)
    trace = [(0, float(f), float(np.max(np.abs(g), initial=0.0)))]
    for it in range(1, max_iter + 1):
        gnorm = np.max(np.abs(g), initial=0.0)
        if gnorm <= tol:
            return OptimResult(x, float(f), g, it - 1, True, trace)
        step = None
        d = _newton_direction(g, H)
        if d is not None:
            step = _line_search(fun, x, f, g, d)
        if step is None:
            step = _line_search(fun, x, f, g, -g)
        if step is None:
            converged = gnorm <= max(tol, STALL_GRAD_RTOL * (1.0 + abs(f)))
            result = OptimResult(x, float(f), g, it - 1, converged, trace)
            if converged:
                return result
            raise NoConvergence(f"line search stalled at |grad|={gnorm:.3e}", best=result)
        x, f, g, H = step
        trace.append((it, float(f), float(np.max(np.abs(g), initial=0.0))))
    gnorm = np.max(np.abs(g), initial=0.0)
    result = OptimResult(x, float(f), g, max_iter, gnorm <= max(tol, STALL_GRAD_RTOL * (1.0 + abs(f))), trace)
    if result.converged:
        return result
    raise NoConvergence(f"no convergence in {max_iter} iterations, |grad|={gnorm:.3e}", best=result)
