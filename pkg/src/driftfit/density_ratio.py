"""Density-ratio estimation r(x) = q(x)/p(x) by uLSIF with a Gaussian basis.

``p`` is the train covariate density and ``q`` the test covariate density.
The coefficients solve the ridge-regularized normal equations

    (H + lam * I) theta = h,
    H = mean_i phi(X_i) phi(X_i)^T   over train covariates,
    h = mean_j phi(Xt_j)             over test covariates,

where ``phi`` collects Gaussian kernels centred at a subsample of the test
covariates. Predictions are clamped to ``[0, clip]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import cdist, pdist

from .datamodel import ULSIF_SIGMA_MULTIPLIERS, make_fold_plan
from .errors import DimensionMismatch
from .numkit import RngLike, as_generator, solve_spd

MEDIAN_SUBSAMPLE = 1000


def gaussian_kernel(x: ArrayLike, c: ArrayLike, sigma: float) -> float:
    """exp(-||x - c||^2 / (2 sigma^2)) for a single pair of points."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    diff = np.asarray(x, dtype=float) - np.asarray(c, dtype=float)
    return float(np.exp(-np.dot(diff, diff) / (2.0 * sigma * sigma)))


def sq_distances(X: NDArray, C: NDArray) -> NDArray[np.float64]:
    return cdist(np.atleast_2d(X), np.atleast_2d(C), "sqeuclidean")


def gaussian_gram(X: ArrayLike, C: ArrayLike, sigma: float) -> NDArray[np.float64]:
    """Matrix of Gaussian kernel values between rows of ``X`` and rows of ``C``."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    return np.exp(-sq_distances(np.asarray(X, float), np.asarray(C, float)) / (2.0 * sigma * sigma))


def median_distance(X: ArrayLike) -> float:
    """Median pairwise Euclidean distance (on an evenly strided subsample)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] > MEDIAN_SUBSAMPLE:
        stride = int(np.ceil(X.shape[0] / MEDIAN_SUBSAMPLE))
        X = X[::stride]
    if X.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(X)))
    return med if med > 0 else 1.0


def default_sigma_grid(X: ArrayLike, multipliers: Sequence[float] = ULSIF_SIGMA_MULTIPLIERS):
    med = median_distance(X)
    return tuple(med * k for k in multipliers)


@dataclass(frozen=True)
class DensityRatioModel:
    """Fitted uLSIF ratio: clamp(theta^T phi(x), 0, clip)."""

    centers: NDArray[np.float64]
    theta: NDArray[np.float64]
    sigma: float
    lam: float
    clip: float = 50.0

    def raw(self, X: ArrayLike) -> NDArray[np.float64]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.centers.shape[1]:
            raise DimensionMismatch(
                f"expected {self.centers.shape[1]} covariates, got {X.shape[1]}"
            )
        return gaussian_gram(X, self.centers, self.sigma) @ self.theta

    def __call__(self, X: ArrayLike) -> NDArray[np.float64]:
        return np.clip(self.raw(X), 0.0, self.clip)

    predict = __call__

    @property
    def n_centers(self) -> int:
        return self.centers.shape[0]


def ratio_predict(model: DensityRatioModel, x: ArrayLike) -> float:
    """Clamped ratio estimate at a single point."""
    return float(model(np.asarray(x, dtype=float).reshape(1, -1))[0])


def _solve_theta(phi_train: NDArray, phi_test: NDArray, lam: float) -> NDArray[np.float64]:
    H = phi_train.T @ phi_train / phi_train.shape[0]
    h = phi_test.mean(axis=0)
    return solve_spd(H + lam * np.eye(H.shape[0]), h)


def ulsif_fit(
    train_X: ArrayLike,
    test_X: ArrayLike,
    sigma: float,
    lam: float,
    n_centers: int = 100,
    rng: RngLike | None = None,
    clip: float = 50.0,
) -> DensityRatioModel:
    """Fit uLSIF with ``n_centers`` Gaussian kernels drawn from the test covariates.

    Args:
        train_X: covariates sampled from the denominator density p (n x d).
        test_X: covariates sampled from the numerator density q (m x d).
        sigma: kernel bandwidth, > 0.
        lam: ridge penalty, >= 0.
        n_centers: number of kernel centres, ``1 <= n_centers <= m``.
        rng: source for the centre subsample; ``None`` takes the first rows.
        clip: upper clamp applied at prediction time.

    Raises:
        NotPositiveDefinite: only reachable with ``lam == 0`` on degenerate data.
    """
    train_X = np.atleast_2d(np.asarray(train_X, dtype=float))
    test_X = np.atleast_2d(np.asarray(test_X, dtype=float))
    if train_X.shape[1] != test_X.shape[1]:
        raise DimensionMismatch("train and test covariates differ in dimension")
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    m = test_X.shape[0]
    if not 1 <= n_centers <= m:
        raise ValueError(f"n_centers must lie in [1, {m}], got {n_centers}")
    if rng is None:
        idx = np.arange(n_centers)
    else:
        idx = as_generator(rng).choice(m, size=n_centers, replace=False)
    centers = test_X[idx]
    theta = _solve_theta(
        gaussian_gram(train_X, centers, sigma), gaussian_gram(test_X, centers, sigma), lam
    )
    return DensityRatioModel(centers, theta, float(sigma), float(lam), float(clip))


def ulsif_objective(model: DensityRatioModel, train_X: ArrayLike, test_X: ArrayLike) -> float:
    """Held-out uLSIF criterion 0.5 * mean[s^2] over train - mean[s] over test."""
    s_train = model(train_X)
    s_test = model(test_X)
    return float(0.5 * np.mean(s_train**2) - np.mean(s_test))


def select_by_score(scores: dict[tuple[float, float], float]) -> tuple[float, float]:
    """Pick the lowest score; ties go to larger lambda, then larger sigma.

    Keys are ``(sigma, lam)``.
    """
    best = min(scores.values())
    slack = 1e-12 * (1.0 + abs(best))
    tied = [key for key, s in scores.items() if s <= best + slack]
    sigma, lam = max(tied, key=lambda key: (key[1], key[0]))
    return sigma, lam


def ulsif_cv(
    train_X: ArrayLike,
    test_X: ArrayLike,
    sigma_grid: Sequence[float] | None,
    lambda_grid: Sequence[float],
    folds: int = 3,
    rng: RngLike | None = None,
    n_centers: int = 100,
    clip: float = 50.0,
    return_scores: bool = False,
):
    """Grid-search (sigma, lambda) by the held-out uLSIF criterion.

    Both samples are split into ``folds`` parts; for each part a model is fit on
    the remaining data and scored on the held-out part. Scores are averaged.
    A ``None`` sigma grid means the median-distance heuristic.
    """
    train_X = np.atleast_2d(np.asarray(train_X, dtype=float))
    test_X = np.atleast_2d(np.asarray(test_X, dtype=float))
    if sigma_grid is None:
        sigma_grid = default_sigma_grid(np.vstack([train_X, test_X]))
    sigma_grid = [float(s) for s in sigma_grid]
    lambda_grid = [float(v) for v in lambda_grid]
    if not sigma_grid or not lambda_grid:
        raise ValueError("grids must be non-empty")
    if len(sigma_grid) == 1 and len(lambda_grid) == 1 and not return_scores:
        return sigma_grid[0], lambda_grid[0]

    gen = as_generator(rng if rng is not None else np.random.default_rng(0))
    plan = make_fold_plan(train_X.shape[0], test_X.shape[0], folds, gen)
    totals = {(s, v): 0.0 for s in sigma_grid for v in lambda_grid}
    for k in range(folds):
        tr_fit, te_fit = train_X[plan.train_complement(k)], test_X[plan.test_complement(k)]
        tr_out, te_out = train_X[plan.train_folds[k]], test_X[plan.test_folds[k]]
        b = min(n_centers, te_fit.shape[0])
        centers = te_fit[gen.choice(te_fit.shape[0], size=b, replace=False)]
        dists = [sq_distances(A, centers) for A in (tr_fit, te_fit, tr_out, te_out)]
        for sigma in sigma_grid:
            phis = [np.exp(-D / (2.0 * sigma * sigma)) for D in dists]
            for lam in lambda_grid:
                theta = _solve_theta(phis[0], phis[1], lam)
                s_out = np.clip(phis[2] @ theta, 0.0, clip)
                s_te = np.clip(phis[3] @ theta, 0.0, clip)
                totals[(sigma, lam)] += 0.5 * np.mean(s_out**2) - np.mean(s_te)
    scores = {key: val / folds for key, val in totals.items()}
    choice = select_by_score(scores)
    return (choice, scores) if return_scores else choice


def ulsif_fit_cv(
    train_X: ArrayLike,
    test_X: ArrayLike,
    sigma_grid: Sequence[float] | None,
    lambda_grid: Sequence[float],
    rng: RngLike,
    folds: int = 3,
    n_centers: int = 100,
    clip: float = 50.0,
) -> DensityRatioModel:
    """Cross-validate the hyperparameters, then refit on all the data."""
    gen = as_generator(rng)
    sigma, lam = ulsif_cv(train_X, test_X, sigma_grid, lambda_grid, folds, gen, n_centers, clip)
    m = np.atleast_2d(test_X).shape[0]
    return ulsif_fit(train_X, test_X, sigma, lam, min(n_centers, m), gen, clip)
