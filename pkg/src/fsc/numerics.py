"""Special functions, SPD factorization, bracketed root finding and seeded sampling.

Random numbers come from numpy's ``Generator`` over the PCG64 bit generator
(``make_rng``); given the same seed and numpy release every draw is
bit-identical.  Gamma variates use numpy's Marsaglia-Tsang squeeze sampler,
which is valid for every shape > 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import optimize, special
from scipy.linalg import solve_triangular

from .errors import DimensionError, DomainError, NoBracket, NoConvergence, NotPositiveDefinite

PIVOT_FLOOR = 1e-12
SYMMETRY_TOL = 1e-8
_RTOL = 4 * float(np.finfo(float).eps)

EULER_GAMMA = 0.57721566490153286061


def digamma(x: float) -> float:
    """Digamma function for x > 0, via ``scipy.special.psi``."""
    x = float(x)
    if not math.isfinite(x) or x <= 0.0:
        raise DomainError(f"digamma requires a finite positive argument, got {x!r}")
    return float(special.psi(x))


def log_gamma(x: float) -> float:
    x = float(x)
    if not math.isfinite(x) or x <= 0.0:
        raise DomainError(f"log_gamma requires a finite positive argument, got {x!r}")
    return math.lgamma(x)


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor of an SPD matrix and its log-determinant."""

    lower_triangular_factor: np.ndarray
    log_determinant: float

    @property
    def dim(self) -> int:
        return self.lower_triangular_factor.shape[0]

    def reconstruct(self) -> np.ndarray:
        L = self.lower_triangular_factor
        return L @ L.T


def _failing_pivot(S: np.ndarray) -> tuple[int, float]:
    """Plain column Cholesky; returns the first pivot at or below the floor."""
    p = S.shape[0]
    L = np.zeros_like(S)
    for k in range(p):
        pivot = S[k, k] - L[k, :k] @ L[k, :k]
        if not pivot > PIVOT_FLOOR:
            return k, float(pivot)
        L[k, k] = math.sqrt(pivot)
        for i in range(k + 1, p):
            L[i, k] = (S[i, k] - L[i, :k] @ L[k, :k]) / L[k, k]
    return -1, float("nan")


def factorize_spd(S) -> SpdFactor:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise NotPositiveDefinite(0, float("nan"), "matrix has non-finite entries")
    if np.max(np.abs(S - S.T), initial=0.0) > SYMMETRY_TOL:
        raise DomainError("matrix is not symmetric within 1e-8")
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        k, v = _failing_pivot(S)
        raise NotPositiveDefinite(max(k, 0), v) from None
    d = np.diag(L)
    small = np.flatnonzero(d * d <= PIVOT_FLOOR)
    if small.size:
        k = int(small[0])
        raise NotPositiveDefinite(k, float(d[k] * d[k]))
    return SpdFactor(L, 2.0 * float(np.sum(np.log(d))))


def factorize_spd_stack(stack) -> tuple[np.ndarray, np.ndarray]:
    """Cholesky factors and log-determinants of a (G, p, p) stack of SPD matrices.

    Falls back to ``factorize_spd`` on failure so the error names the pivot.
    """
    stack = np.asarray(stack, dtype=float)
    try:
        L = np.linalg.cholesky(stack)
        d = np.einsum("gii->gi", L)
        ok = bool(np.all(d * d > PIVOT_FLOOR)) and bool(np.all(np.isfinite(L)))
    except np.linalg.LinAlgError:
        ok = False
    if not ok:
        for S in stack:
            factorize_spd(S)
        raise NotPositiveDefinite(0, None, "matrix stack is not positive definite")
    return L, 2.0 * np.log(d).sum(axis=1)


def mahalanobis_sq(x, mu, factor: SpdFactor):
    """Squared Mahalanobis distance of ``x`` (a p-vector or n x p rows) from ``mu``.

    One triangular solve against the Cholesky factor; returns a float for a
    single vector and an n-vector otherwise.
    """
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    p = factor.dim
    if mu.shape != (p,) or x.shape[-1:] != (p,) or x.ndim > 2:
        raise DimensionError(
            f"dimension mismatch: x {x.shape}, mu {mu.shape}, scale {p}x{p}"
        )
    diff = (x - mu).reshape(-1, p)
    y = solve_triangular(factor.lower_triangular_factor, diff.T, lower=True, check_finite=False)
    d = np.einsum("ij,ij->j", y, y)
    return float(d[0]) if x.ndim == 1 else d


@dataclass(frozen=True)
class RootBracket:
    lo: float
    hi: float
    tolerance: float = 1e-6
    max_iterations: int = 200

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError(f"bracket requires lo < hi, got [{self.lo}, {self.hi}]")
        if not self.tolerance > 0:
            raise DomainError("bracket tolerance must be positive")


def find_root(f: Callable[[float], float], bracket: RootBracket) -> float:
    """Brent's method on ``bracket``; raises NoBracket without a sign change."""
    f_lo, f_hi = f(bracket.lo), f(bracket.hi)
    if f_lo == 0.0:
        return bracket.lo
    if f_hi == 0.0:
        return bracket.hi
    if (f_lo > 0.0) == (f_hi > 0.0) or not (math.isfinite(f_lo) and math.isfinite(f_hi)):
        raise NoBracket(bracket.lo, bracket.hi, f_lo, f_hi)
    try:
        root, info = optimize.brentq(
            f,
            bracket.lo,
            bracket.hi,
            xtol=bracket.tolerance,
            rtol=_RTOL,
            maxiter=bracket.max_iterations,
            full_output=True,
            disp=False,
        )
    except RuntimeError as exc:  # pragma: no cover - disp=False reports via info
        raise NoConvergence(str(exc)) from exc
    if not info.converged:
        raise NoConvergence(
            f"root search did not converge in {bracket.max_iterations} iterations"
        )
    return float(root)


# --- sampling ---------------------------------------------------------------


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class StudentT:
    loc: np.ndarray
    scale: np.ndarray
    dof: float


@dataclass(frozen=True)
class Gamma:
    shape: float
    rate: float


Distribution = Union[Gaussian, StudentT, Gamma]


def make_rng(seed) -> np.random.Generator:
    """PCG64-backed generator; ``seed`` may be an int or a sequence of ints."""
    return np.random.Generator(np.random.PCG64(seed))


def _location_scale(loc, scale):
    loc = np.atleast_1d(np.asarray(loc, dtype=float))
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    if scale.shape != (loc.size, loc.size):
        raise DimensionError(f"location {loc.shape} and scale {scale.shape} disagree")
    try:
        L = factorize_spd(scale).lower_triangular_factor
    except NotPositiveDefinite as exc:
        raise DomainError(f"scale matrix is not positive definite: {exc}") from None
    return loc, L


def sample(dist: Distribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` rows from ``dist``.

    Student-t rows are built as ``mu + L z / sqrt(w)`` with
    ``w ~ gamma(nu/2, rate nu/2)``.  Gamma draws come back as an n x 1 matrix.
    """
    if n < 0:
        raise DomainError("sample size must be non-negative")
    if isinstance(dist, Gamma):
        if not (dist.shape > 0 and dist.rate > 0):
            raise DomainError("gamma shape and rate must be positive")
        return rng.gamma(dist.shape, 1.0 / dist.rate, size=(n, 1))
    if isinstance(dist, Gaussian):
        loc, L = _location_scale(dist.mean, dist.cov)
        z = rng.standard_normal((n, loc.size))
        return loc + z @ L.T
    if isinstance(dist, StudentT):
        if not (dist.dof > 0 and math.isfinite(dist.dof)):
            raise DomainError(f"degrees of freedom must be positive, got {dist.dof}")
        loc, L = _location_scale(dist.loc, dist.scale)
        z = rng.standard_normal((n, loc.size))
        w = rng.gamma(dist.dof / 2.0, 2.0 / dist.dof, size=n)
        return loc + (z @ L.T) / np.sqrt(w)[:, None]
    raise DomainError(f"unknown distribution {dist!r}")
