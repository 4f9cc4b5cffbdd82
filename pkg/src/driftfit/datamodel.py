"""Datasets, cross-fitting fold plans, and estimator configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionMismatch, InvalidData, TooFewSamples
from .numkit import RngLike, as_generator


def _as_covariates(X: ArrayLike, name: str) -> NDArray[np.float64]:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InvalidData(f"{name} must be a non-empty n x d matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidData(f"{name} contains NaN or Inf")
    return X


@dataclass(frozen=True)
class LabeledDataset:
    """Train sample: covariates ``X`` (n x d) and outcomes ``Y`` (n,)."""

    X: NDArray[np.float64]
    Y: NDArray[np.float64]

    def __post_init__(self):
        X = _as_covariates(self.X, "X")
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        if Y.shape[0] != X.shape[0]:
            raise DimensionMismatch(f"X has {X.shape[0]} rows but Y has {Y.shape[0]} entries")
        if not np.all(np.isfinite(Y)):
            raise InvalidData("Y contains NaN or Inf")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx: ArrayLike) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=int)
        return LabeledDataset(self.X[idx], self.Y[idx])


@dataclass(frozen=True)
class UnlabeledDataset:
    """Test sample: covariates only (m x d)."""

    X: NDArray[np.float64]

    def __post_init__(self):
        object.__setattr__(self, "X", _as_covariates(self.X, "X"))

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx: ArrayLike) -> "UnlabeledDataset":
        return UnlabeledDataset(self.X[np.asarray(idx, dtype=int)])


def check_pair(train: LabeledDataset, test: UnlabeledDataset) -> None:
    if train.d != test.d:
        raise DimensionMismatch(f"train has d={train.d} but test has d={test.d}")


@dataclass(frozen=True)
class FoldPlan:
    """Joint xi-fold partition of train indices and test indices (0-based)."""

    xi: int
    train_folds: tuple[NDArray[np.int64], ...]
    test_folds: tuple[NDArray[np.int64], ...]

    @property
    def n(self) -> int:
        return sum(len(f) for f in self.train_folds)

    @property
    def m(self) -> int:
        return sum(len(f) for f in self.test_folds)

    def train_complement(self, fold: int) -> NDArray[np.int64]:
        return np.concatenate([f for k, f in enumerate(self.train_folds) if k != fold])

    def test_complement(self, fold: int) -> NDArray[np.int64]:
        return np.concatenate([f for k, f in enumerate(self.test_folds) if k != fold])

    def train_fold_of(self) -> NDArray[np.int64]:
        """Fold label of every train index."""
        labels = np.empty(self.n, dtype=np.int64)
        for k, f in enumerate(self.train_folds):
            labels[f] = k
        return labels


def _chop(perm: NDArray[np.int64], xi: int) -> tuple[NDArray[np.int64], ...]:
    # leftovers of len % xi go to the lowest-numbered folds
    base, extra = divmod(len(perm), xi)
    sizes = [base + (1 if k < extra else 0) for k in range(xi)]
    bounds = np.cumsum([0] + sizes)
    return tuple(perm[bounds[k] : bounds[k + 1]] for k in range(xi))


def make_fold_plan(n: int, m: int, xi: int, rng: RngLike) -> FoldPlan:
    """Randomly partition ``range(n)`` and ``range(m)`` into ``xi`` balanced folds.

    Each index range is permuted uniformly and cut into contiguous blocks whose
    sizes differ by at most one.

    Raises:
        TooFewSamples: if ``n < xi`` or ``m < xi``.
    """
    if xi < 2:
        raise ValueError(f"xi must be >= 2, got {xi}")
    if n < xi or m < xi:
        raise TooFewSamples(f"need n, m >= xi={xi}; got n={n}, m={m}")
    gen = as_generator(rng)
    train_perm = gen.permutation(n)
    test_perm = gen.permutation(m)
    return FoldPlan(xi, _chop(train_perm, xi), _chop(test_perm, xi))


def single_fold_plan(n: int, m: int) -> FoldPlan:
    """Degenerate plan without sample splitting (nuisances see everything)."""
    return FoldPlan(1, (np.arange(n),), (np.arange(m),))


ULSIF_SIGMA_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)
ULSIF_LAMBDA_GRID = (1e-3, 1e-2, 1e-1, 1.0)
KRR_SIGMA_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)
KRR_LAMBDA_GRID = (1e-5, 1e-4, 1e-3, 1e-2)


@dataclass(frozen=True)
class EstimatorConfig:
    """Tuning knobs for the estimators.

    Sigma grids left as ``None`` are resolved per dataset as the median
    pairwise distance times ``ULSIF_SIGMA_MULTIPLIERS`` / ``KRR_SIGMA_MULTIPLIERS``.
    """

    xi: int = 2
    ratio_clip: float = 50.0
    optimizer_tol: float = 1e-9
    optimizer_max_iter: int = 200
    ulsif_lambda_grid: tuple[float, ...] = ULSIF_LAMBDA_GRID
    ulsif_sigma_grid: tuple[float, ...] | None = None
    krr_lambda_grid: tuple[float, ...] = KRR_LAMBDA_GRID
    krr_sigma_grid: tuple[float, ...] | None = None
    scsa_alpha: float = 0.5
    cv_folds: int = 3
    ulsif_centers: int = 100

    def __post_init__(self):
        for name in ("ulsif_lambda_grid", "ulsif_sigma_grid", "krr_lambda_grid", "krr_sigma_grid"):
            value = getattr(self, name)
            if value is None:
                continue
            value = tuple(float(v) for v in value)
            if not value:
                raise ValueError(f"{name} must be non-empty")
            if name.endswith("sigma_grid") and min(value) <= 0:
                raise ValueError(f"{name} entries must be > 0")
            if name.endswith("lambda_grid") and min(value) < 0:
                raise ValueError(f"{name} entries must be >= 0")
            object.__setattr__(self, name, value)
        if self.xi < 2:
            raise ValueError("xi must be >= 2")
        if self.ratio_clip <= 0:
            raise ValueError("ratio_clip must be > 0")
        if self.optimizer_tol <= 0:
            raise ValueError("optimizer_tol must be > 0")
        if self.optimizer_max_iter < 1:
            raise ValueError("optimizer_max_iter must be >= 1")
        if not 0.0 <= self.scsa_alpha <= 1.0:
            raise ValueError("scsa_alpha must lie in [0, 1]")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if self.ulsif_centers < 1:
            raise ValueError("ulsif_centers must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EstimatorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EstimatorConfig":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError("config JSON must be a flat object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "EstimatorConfig":
        return cls.from_json(Path(path).read_text())
