"""Linear algebra and random-stream substrate shared by the samplers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack, solve_triangular

from ._backend import kernels


class DimensionError(ValueError):
    """Raised when a matrix argument has the wrong shape or structure."""


class NumericalRankError(np.linalg.LinAlgError):
    """Cholesky failed; ``pivot`` is the 0-based index of the failing pivot."""

    def __init__(self, pivot: int, message: str | None = None):
        self.pivot = pivot
        super().__init__(message or f"matrix not positive definite (pivot {pivot})")


@dataclass(frozen=True)
class SymEig:
    """Eigenvalues sorted descending and matching orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def _as_square(m, name="matrix"):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise DimensionError(f"{name} must be a nonempty square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DimensionError(f"{name} has non-finite entries")
    return m


def sym_eig(m, tol: float = 1e-14) -> SymEig:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Eigenvalues come back in descending order. Each eigenvector is signed so
    that its largest-magnitude entry is positive, which makes projections
    onto the basis reproducible.
    """
    m = _as_square(m)
    scale = max(np.max(np.abs(m)), np.finfo(float).tiny)
    if np.max(np.abs(m - m.T)) > 1e-10 * scale:
        raise DimensionError("matrix is not symmetric")
    w, v, _ = kernels.jacobi_eigh(0.5 * (m + m.T), tol)
    order = np.argsort(-w, kind="stable")
    w = np.asarray(w)[order]
    v = np.asarray(v)[:, order]
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return SymEig(w, v * signs)


def cholesky(m, jitter: bool = True) -> np.ndarray:
    """Lower Cholesky factor.

    On failure a single diagonal boost of ``1e-10 * trace(m) / n`` is tried
    before raising :class:`NumericalRankError`.
    """
    m = _as_square(m)
    c, info = lapack.dpotrf(m, lower=1, clean=1)
    if info == 0:
        return c
    if info < 0:
        raise DimensionError(f"dpotrf argument {-info} invalid")
    pivot = info - 1
    if jitter:
        n = m.shape[0]
        boost = 1e-10 * np.trace(m) / n
        if boost > 0:
            c, info = lapack.dpotrf(m + boost * np.eye(n), lower=1, clean=1)
            if info == 0:
                return c
            if info > 0:
                pivot = info - 1
    raise NumericalRankError(pivot)


def cho_solve(chol_lower: np.ndarray, b) -> np.ndarray:
    y = solve_triangular(chol_lower, b, lower=True, check_finite=False)
    return solve_triangular(chol_lower.T, y, lower=False, check_finite=False)


def solve_spd(m, b) -> np.ndarray:
    m = _as_square(m)
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != m.shape[0]:
        raise DimensionError(f"rhs has {b.shape[0]} rows, matrix has {m.shape[0]}")
    return cho_solve(cholesky(m), b)


@dataclass
class RngStream:
    """A reproducible random stream keyed by ``(seed, stream_id)``.

    Backed by numpy's counter-based Philox generator seeded through a
    ``SeedSequence`` whose spawn key carries the stream id, so distinct ids
    give independent streams. ``child(i)`` derives a sub-stream
    deterministically, which is how replication loops stay independent of
    scheduling order.
    """

    seed: int = 0
    stream_id: int = 0
    path: tuple = ()
    gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id), *self.path))
        self.gen = np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, (*self.path, int(index)))

    def uniform(self, n: int) -> np.ndarray:
        """``n`` draws strictly inside (0, 1)."""
        if n < 0:
            raise ValueError("n must be nonnegative")
        raw = self.gen.integers(0, 2**53, size=n, dtype=np.int64)
        return (raw.astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, size=None) -> np.ndarray:
        return self.gen.standard_normal(size)

    def gamma(self, shape, rate, size=None):
        """Gamma draws under the shape/rate parameterization, floored at the
        smallest positive double so precisions never hit exactly zero."""
        g = self.gen.standard_gamma(shape, size) / rate
        return np.maximum(g, np.finfo(float).tiny)


def rng_draws(stream: RngStream, n: int) -> np.ndarray:
    return stream.uniform(n)


def as_rng(rng) -> RngStream:
    """Accept an :class:`RngStream`, an int seed, or None (seed 0)."""
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream(0)
    return RngStream(int(rng))
