import numpy as np
import pytest

from driftfit.errors import NoConvergence
from driftfit.optim import newton_minimize


def quadratic(A, b):
    def fun(x):
        return 0.5 * x @ A @ x - b @ x, A @ x - b, A
    return fun


def test_newton_solves_quadratic_in_one_step():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])
    res = newton_minimize(quadratic(A, b), np.zeros(2))
    assert res.converged and res.iterations == 1
    np.testing.assert_allclose(res.x, np.linalg.solve(A, b), atol=1e-12)
    assert res.trace[0][0] == 0 and len(res.trace) == 2


def test_falls_back_to_gradient_on_indefinite_hessian():
    # f = sum(x^4) - x is convex but the supplied Hessian is replaced by an indefinite one
    def fun(x):
        return float(np.sum(x**4) - np.sum(x)), 4 * x**3 - 1, -np.eye(x.size)

    res = newton_minimize(fun, np.zeros(2), tol=1e-6, max_iter=10_000)
    np.testing.assert_allclose(res.x, (0.25) ** (1 / 3), atol=1e-5)


def test_rosenbrock():
    def fun(z):
        x, y = z
        f = (1 - x) ** 2 + 100 * (y - x * x) ** 2
        g = np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])
        H = np.array([[2 - 400 * (y - 3 * x * x), -400 * x], [-400 * x, 200.0]])
        return f, g, H

    res = newton_minimize(fun, np.array([-1.2, 1.0]))
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-7)


def test_no_convergence_carries_best_iterate():
    def fun(x):
        return float(np.sum(np.exp(x))), np.exp(x), np.diag(np.exp(x))  # no minimizer

    with pytest.raises(NoConvergence) as info:
        newton_minimize(fun, np.zeros(1), max_iter=5)
    best = info.value.best
    assert best is not None and best.x[0] < 0 and not best.converged
