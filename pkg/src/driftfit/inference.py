"""Plug-in sandwich covariance, pointwise standard errors, normal intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import ndtri

from .datamodel import LabeledDataset, UnlabeledDataset
from .drcsa import DrFitResult
from .models import ParametricModel
from .numkit import solve_spd


@dataclass(frozen=True)
class SandwichCovariance:
    """omega = bread^{-1} meat bread^{-1}; standard errors are sqrt(diag(omega) / n)."""

    omega: NDArray[np.float64]
    bread: NDArray[np.float64]
    meat: NDArray[np.float64]
    n_effective: int

    @property
    def se(self) -> NDArray[np.float64]:
        return np.sqrt(np.maximum(np.diag(self.omega), 0.0) / self.n_effective)


def sandwich(bread: ArrayLike, meat: ArrayLike, n_effective: int) -> SandwichCovariance:
    bread = np.asarray(bread, float)
    meat = np.asarray(meat, float)
    left = solve_spd(bread, meat)                 # B^{-1} M
    omega = solve_spd(bread, left.T).T            # (B^{-1} M) B^{-1}
    omega = 0.5 * (omega + omega.T)
    return SandwichCovariance(omega, bread, meat, int(n_effective))


def estimate_covariance(fit: DrFitResult, train: LabeledDataset,
                        test: UnlabeledDataset) -> SandwichCovariance:
    """Plug-in asymptotic covariance of a cross-fitted DR-type estimate.

    bread = mean_j gdot(Xt_j) gdot(Xt_j)^T over test covariates;
    meat  = mean_i (Y_i - f(X_i))^2 w(X_i)^2 gdot(X_i) gdot(X_i)^T over train,
    with ``f`` and ``w = r^alpha`` taken from each sample's own fold.
    """
    G_test = fit.model.grad(test.X)
    bread = G_test.T @ G_test / test.m
    f, w = fit.own_fold_values(train)
    G = fit.model.grad(train.X)
    scale = ((train.Y - f) * w) ** 2
    meat = (G * scale[:, None]).T @ G / train.n
    return sandwich(bread, meat, train.n)


def weighted_ls_covariance(model: ParametricModel, data: LabeledDataset,
                           weights: ArrayLike | None = None) -> SandwichCovariance:
    """Heteroskedasticity-robust sandwich for (weighted) least squares.

    bread = mean_i w_i gdot gdot^T, meat = mean_i w_i^2 e_i^2 gdot gdot^T.
    """
    w = np.ones(data.n) if weights is None else np.asarray(weights, float)
    G = model.grad(data.X)
    resid = data.Y - model(data.X)
    bread = (G * w[:, None]).T @ G / data.n
    meat = (G * ((w * resid) ** 2)[:, None]).T @ G / data.n
    return sandwich(bread, meat, data.n)


def pointwise_se(cov: SandwichCovariance, model: ParametricModel, x: ArrayLike) -> NDArray | float:
    """sqrt(gdot(x)^T omega gdot(x) / n) at one point or at each row of ``x``."""
    x = np.asarray(x, float)
    single = x.ndim == 1
    G = model.grad(x.reshape(1, -1) if single else x)
    quad = np.einsum("ij,jk,ik->i", G, cov.omega, G)
    se = np.sqrt(np.maximum(quad, 0.0) / cov.n_effective)
    return float(se[0]) if single else se


def normal_quantile(p: float | ArrayLike):
    return ndtri(p)


def confidence_interval(estimate, se, level: float = 0.95):
    """Two-sided normal interval ``estimate -/+ z_{(1+level)/2} * se``."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    se = np.asarray(se, float)
    if np.any(se < 0):
        raise ValueError("se must be >= 0")
    z = ndtri(0.5 * (1.0 + level))
    est = np.asarray(estimate, float)
    lo, hi = est - z * se, est + z * se
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi
