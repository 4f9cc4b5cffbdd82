"""Small dense numerical kernel: SPD solves and seeded random streams.

Matrices are plain 2-D ``float64`` numpy arrays. Everything here is a pure
function of its inputs; random draws come from explicit :class:`RngStream`
identities so that each replication of an experiment owns an independent,
reproducible generator.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionMismatch, InvalidData, NotPositiveDefinite

_UINT64_MAX = 2**64 - 1
SYMMETRY_RTOL = 1e-10
JITTER_SCALE = 1e-10
JITTER_DOUBLINGS = 3


@dataclass(frozen=True)
class RngStream:
    """Identity of a reproducible random stream.

    Two streams with the same ``(seed, stream_id)`` produce identical sample
    sequences; distinct ``stream_id`` values give statistically independent
    streams (numpy ``SeedSequence`` spawn keys under PCG64).
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 0 <= value <= _UINT64_MAX:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value!r}")

    def generator(self) -> np.random.Generator:
        """Return a fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(seq))

    def substream(self, key: int | str) -> "RngStream":
        """Derive a named child stream; the mapping is stable across runs."""
        digest = hashlib.blake2b(f"{self.stream_id}/{key}".encode(), digest_size=8).digest()
        return RngStream(self.seed, int.from_bytes(digest, "little"))


RngLike = Union[RngStream, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def as_matrix(a: ArrayLike, name: str = "matrix") -> NDArray[np.float64]:
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidData(f"{name} contains non-finite entries")
    return arr


def _check_spd_input(A: NDArray[np.float64]) -> None:
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
    scale = max(np.max(np.abs(A)), 1.0) if A.size else 1.0
    if np.max(np.abs(A - A.T), initial=0.0) > SYMMETRY_RTOL * scale:
        raise DimensionMismatch("matrix is not symmetric within tolerance")


def _factor(A: NDArray[np.float64]) -> tuple[NDArray[np.float64], bool]:
    """Cholesky factor with diagonal-jitter retries."""
    dim = A.shape[0]
    jitter = JITTER_SCALE * max(np.trace(A), 0.0) / dim
    if jitter == 0.0:
        jitter = JITTER_SCALE
    attempts = [0.0] + [jitter * 2**k for k in range(JITTER_DOUBLINGS + 1)]
    for extra in attempts:
        try:
            work = A if extra == 0.0 else A + extra * np.eye(dim)
            return scipy.linalg.cho_factor(work, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefinite(
        f"Cholesky failed for {dim}x{dim} matrix after {JITTER_DOUBLINGS} jitter doublings"
    )


def cholesky(A: ArrayLike) -> NDArray[np.float64]:
    """Lower-triangular ``L`` with ``L @ L.T == A`` (up to jitter)."""
    A = as_matrix(A, "A")
    _check_spd_input(A)
    c, _ = _factor(A)
    return np.tril(c)


def solve_spd(A: ArrayLike, b: ArrayLike, check: bool = True) -> NDArray[np.float64]:
    """Solve ``A x = b`` for symmetric positive-definite ``A``.

    ``b`` may be a vector or a matrix of right-hand sides. ``check=False``
    skips the finiteness and symmetry scans for matrices built symmetric.

    Raises:
        DimensionMismatch: ``A`` is not square/symmetric or ``b`` does not match.
        NotPositiveDefinite: factorization failed after all jitter retries.
    """
    if check:
        A = as_matrix(A, "A")
        _check_spd_input(A)
    else:
        A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if b.ndim not in (1, 2) or b.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"rhs shape {b.shape} does not match matrix {A.shape}")
    factor = _factor(A)
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def sample_mvnormal(
    rng: RngLike, mean: ArrayLike, cov: ArrayLike, count: int
) -> NDArray[np.float64]:
    """Draw ``count`` i.i.d. rows from ``N(mean, cov)`` via the Cholesky factor."""
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = as_matrix(cov, "cov")
    if cov.shape != (mean.size, mean.size):
        raise DimensionMismatch(f"cov shape {cov.shape} does not match mean of size {mean.size}")
    L = cholesky(cov)
    z = as_generator(rng).standard_normal((int(count), mean.size))
    return mean + z @ L.T
