"""Regression models: parametric g_beta (linear-in-basis or logistic) and KRR.

A parametric model is ``g_beta(x) = link(Z(x) @ beta)`` with ``Z`` a monomial
basis and ``link`` either the identity or the logistic sigmoid. Both links
have second derivative of the form ``link''(t) Z Z^T``, which keeps the
gradient and Hessian code shared.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Literal, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .datamodel import KRR_SIGMA_MULTIPLIERS, LabeledDataset, make_fold_plan
from .density_ratio import default_sigma_grid, gaussian_gram, select_by_score, sq_distances
from .errors import DimensionMismatch
from .numkit import RngLike, as_generator, solve_spd
from .optim import newton_minimize

ModelKind = Literal["linear", "logistic"]
KINDS = ("linear", "logistic")


# ---------------------------------------------------------------------------
# bases

_TERM_RE = re.compile(r"^x(\d+)(?:\^(\d+))?$")


def _term_label(exps: tuple[int, ...]) -> str:
    parts = []
    for k, e in enumerate(exps):
        if e == 1:
            parts.append(f"x{k + 1}")
        elif e > 1:
            parts.append(f"x{k + 1}^{e}")
    return "*".join(parts) if parts else "1"


@dataclass(frozen=True)
class Basis:
    """Monomial feature map; each term is a tuple of per-covariate exponents."""

    exponents: tuple[tuple[int, ...], ...]
    name: str = "custom"

    def __post_init__(self):
        if not self.exponents:
            raise ValueError("basis needs at least one term")
        widths = {len(e) for e in self.exponents}
        if len(widths) != 1:
            raise ValueError("all basis terms must have the same covariate dimension")

    @property
    def d(self) -> int:
        return len(self.exponents[0])

    @property
    def k(self) -> int:
        return len(self.exponents)

    @property
    def labels(self) -> list[str]:
        return [_term_label(e) for e in self.exponents]

    def __call__(self, X: ArrayLike) -> NDArray[np.float64]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.d:
            raise DimensionMismatch(f"basis expects d={self.d}, got {X.shape[1]}")
        E = np.asarray(self.exponents, dtype=float)
        if np.all((E == 0) | (E == 1)):
            # product of selected columns; avoids 0**0 surprises and is faster
            Z = np.ones((X.shape[0], self.k))
            for j, e in enumerate(self.exponents):
                for col, p in enumerate(e):
                    if p:
                        Z[:, j] *= X[:, col]
            return Z
        return np.prod(X[:, None, :] ** E[None, :, :], axis=2)

    @classmethod
    def affine(cls, d: int) -> "Basis":
        terms = [tuple([0] * d)] + [tuple(int(i == j) for i in range(d)) for j in range(d)]
        return cls(tuple(terms), "affine")

    @classmethod
    def quad2d(cls) -> "Basis":
        # order: 1, x1, x1^2, x2, x2^2, x1*x2
        return cls(((0, 0), (1, 0), (2, 0), (0, 1), (0, 2), (1, 1)), "quad2d")

    @classmethod
    def from_terms(cls, terms: str | Sequence[str], d: int) -> "Basis":
        """Parse terms such as ``"1,x1,x1^2,x1*x2"``."""
        if isinstance(terms, str):
            terms = [t for t in terms.split(",")]
        exps = []
        for term in terms:
            term = term.strip()
            e = [0] * d
            if term != "1":
                for factor in term.split("*"):
                    match = _TERM_RE.match(factor.strip())
                    if not match:
                        raise ValueError(f"cannot parse basis term {term!r}")
                    col = int(match.group(1)) - 1
                    if not 0 <= col < d:
                        raise ValueError(f"term {term!r} refers to x{col + 1} but d={d}")
                    e[col] += int(match.group(2) or 1)
            exps.append(tuple(e))
        return cls(tuple(exps), ",".join(t.strip() for t in terms))


def resolve_basis(basis: str | Basis, d: int) -> Basis:
    """Accept a Basis, ``"affine"``, ``"quad2d"`` or an explicit monomial list."""
    if isinstance(basis, Basis):
        if basis.d != d:
            raise DimensionMismatch(f"basis has d={basis.d}, data has d={d}")
        return basis
    if basis == "affine":
        return Basis.affine(d)
    if basis == "quad2d":
        if d != 2:
            raise DimensionMismatch("quad2d basis needs d=2")
        return Basis.quad2d()
    return Basis.from_terms(basis, d)


# ---------------------------------------------------------------------------
# parametric models


def _sigmoid(t: NDArray) -> NDArray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class ParametricModel:
    """g_beta(x) = link(Z(x) @ beta) with link identity or logistic."""

    kind: ModelKind
    basis: Basis
    beta: NDArray[np.float64]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if beta.size != self.basis.k:
            raise DimensionMismatch(f"beta has {beta.size} entries, basis has {self.basis.k}")
        object.__setattr__(self, "beta", beta)

    @classmethod
    def zeros(cls, kind: ModelKind, basis: Basis) -> "ParametricModel":
        return cls(kind, basis, np.zeros(basis.k))

    @property
    def k(self) -> int:
        return self.basis.k

    def with_beta(self, beta: ArrayLike) -> "ParametricModel":
        return replace(self, beta=np.asarray(beta, dtype=float))

    def link_derivs(self, Z: NDArray) -> tuple[NDArray, NDArray, NDArray]:
        """link(t), link'(t), link''(t) at t = Z @ beta."""
        t = Z @ self.beta
        if self.kind == "linear":
            return t, np.ones_like(t), np.zeros_like(t)
        s = _sigmoid(t)
        d1 = s * (1.0 - s)
        return s, d1, d1 * (1.0 - 2.0 * s)

    def __call__(self, X: ArrayLike) -> NDArray[np.float64]:
        return self.link_derivs(self.basis(X))[0]

    predict = __call__

    def grad(self, X: ArrayLike) -> NDArray[np.float64]:
        """Rows are d g_beta(x_i) / d beta."""
        Z = self.basis(X)
        return self.link_derivs(Z)[1][:, None] * Z

    def hess_contract(self, X: ArrayLike, v: ArrayLike) -> NDArray[np.float64]:
        """Rows are (d^2 g_beta(x_i) / d beta^2) @ v."""
        Z = self.basis(X)
        v = np.asarray(v, dtype=float)
        return (self.link_derivs(Z)[2] * (Z @ v))[:, None] * Z


def model_predict(model: ParametricModel, x: ArrayLike) -> float:
    return float(model(np.asarray(x, float).reshape(1, -1))[0])


def model_grad(model: ParametricModel, x: ArrayLike) -> NDArray[np.float64]:
    return model.grad(np.asarray(x, float).reshape(1, -1))[0]


def model_hess_contract(model: ParametricModel, x: ArrayLike, v: ArrayLike) -> NDArray[np.float64]:
    return model.hess_contract(np.asarray(x, float).reshape(1, -1), v)[0]


def weighted_sq_risk(model: ParametricModel, X, Y, weights):
    """Value, gradient and Hessian of mean_i w_i (Y_i - g_beta(X_i))^2."""
    Z = model.basis(X)
    g, d1, d2 = model.link_derivs(Z)
    n = Z.shape[0]
    resid = Y - g
    value = float(np.sum(weights * resid**2) / n)
    G = d1[:, None] * Z
    grad = -2.0 / n * G.T @ (weights * resid)
    hess = 2.0 / n * ((G * weights[:, None]).T @ G - (Z * (weights * resid * d2)[:, None]).T @ Z)
    return value, grad, hess


def wls_fit(
    data: LabeledDataset,
    basis: str | Basis,
    weights: ArrayLike,
    kind: ModelKind = "linear",
    tol: float = 1e-9,
    max_iter: int = 200,
    beta0: ArrayLike | None = None,
) -> ParametricModel:
    """Minimize mean_i w_i (Y_i - g_beta(X_i))^2.

    Linear kind: closed form (Z^T W Z)^{-1} Z^T W Y. Logistic kind: damped
    Newton on the weighted squared risk (not the log-likelihood).

    Raises:
        NotPositiveDefinite: weighted Gram matrix singular.
        NoConvergence: logistic Newton did not converge.
    """
    basis = resolve_basis(basis, data.d)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size != data.n:
        raise DimensionMismatch(f"{w.size} weights for {data.n} observations")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be >= 0 with at least one positive entry")
    Z = basis(data.X)
    if kind == "linear":
        Zw = Z * w[:, None]
        beta = solve_spd(Zw.T @ Z, Zw.T @ data.Y)
        return ParametricModel("linear", basis, beta)
    template = ParametricModel.zeros(kind, basis)
    start = np.zeros(basis.k) if beta0 is None else np.asarray(beta0, dtype=float)
    res = newton_minimize(
        lambda b: weighted_sq_risk(template.with_beta(b), data.X, data.Y, w), start, tol, max_iter
    )
    return template.with_beta(res.x)


def ols_fit(
    data: LabeledDataset, basis: str | Basis, kind: ModelKind = "linear", **kwargs
) -> ParametricModel:
    """Unweighted least squares; beta = (Z^T Z)^{-1} Z^T Y for the linear kind."""
    return wls_fit(data, basis, np.ones(data.n), kind, **kwargs)


# ---------------------------------------------------------------------------
# kernel ridge regression


@dataclass(frozen=True)
class KrrModel:
    """Gaussian-kernel ridge regressor; alpha solves (K + lam * n * I) alpha = Y."""

    centers: NDArray[np.float64]
    alpha: NDArray[np.float64]
    sigma: float
    lam: float

    def __call__(self, X: ArrayLike) -> NDArray[np.float64]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.centers.shape[1]:
            raise DimensionMismatch(f"expected {self.centers.shape[1]} covariates, got {X.shape[1]}")
        return gaussian_gram(X, self.centers, self.sigma) @ self.alpha

    predict = __call__


def krr_fit(data: LabeledDataset, sigma: float, lam: float) -> KrrModel:
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    K = gaussian_gram(data.X, data.X, sigma)
    alpha = solve_spd(K + lam * data.n * np.eye(data.n), data.Y)
    return KrrModel(data.X.copy(), alpha, float(sigma), float(lam))


def krr_predict(model: KrrModel, x: ArrayLike) -> float:
    return float(model(np.asarray(x, float).reshape(1, -1))[0])


def krr_cv(
    data: LabeledDataset,
    sigma_grid: Sequence[float] | None,
    lambda_grid: Sequence[float],
    folds: int = 3,
    rng: RngLike | None = None,
    return_scores: bool = False,
):
    """Choose (sigma, lambda) by held-out MSE; ties go to larger lambda then sigma."""
    if sigma_grid is None:
        sigma_grid = default_sigma_grid(data.X, KRR_SIGMA_MULTIPLIERS)
    sigma_grid = [float(s) for s in sigma_grid]
    lambda_grid = [float(v) for v in lambda_grid]
    if not sigma_grid or not lambda_grid:
        raise ValueError("grids must be non-empty")
    if len(sigma_grid) == 1 and len(lambda_grid) == 1 and not return_scores:
        return sigma_grid[0], lambda_grid[0]
    gen = as_generator(rng if rng is not None else np.random.default_rng(0))
    plan = make_fold_plan(data.n, folds, folds, gen)
    D = sq_distances(data.X, data.X)
    totals = {(s, v): 0.0 for s in sigma_grid for v in lambda_grid}
    for sigma in sigma_grid:
        K = np.exp(-D / (2.0 * sigma * sigma))
        for k in range(folds):
            fit_idx, out_idx = plan.train_complement(k), plan.train_folds[k]
            K_fit = K[np.ix_(fit_idx, fit_idx)]
            K_out = K[np.ix_(out_idx, fit_idx)]
            n_fit = fit_idx.size
            for lam in lambda_grid:
                alpha = solve_spd(K_fit + lam * n_fit * np.eye(n_fit), data.Y[fit_idx], check=False)
                totals[(sigma, lam)] += float(np.mean((K_out @ alpha - data.Y[out_idx]) ** 2))
    scores = {key: val / folds for key, val in totals.items()}
    choice = select_by_score(scores)
    return (choice, scores) if return_scores else choice


def krr_fit_cv(
    data: LabeledDataset,
    sigma_grid: Sequence[float] | None,
    lambda_grid: Sequence[float],
    rng: RngLike,
    folds: int = 3,
) -> KrrModel:
    sigma, lam = krr_cv(data, sigma_grid, lambda_grid, folds, rng)
    return krr_fit(data, sigma, lam)
