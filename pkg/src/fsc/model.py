"""Data containers, component densities and the weighted log-likelihoods."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .errors import DimensionError, DomainError
from .numerics import SpdFactor, factorize_spd, factorize_spd_stack, mahalanobis_sq
from .structures import CovarianceStructure

FAMILIES = ("gaussian", "t")
VARIANTS = ("original", "alternative")
LOG_2PI = math.log(2.0 * math.pi)


def logsumexp(a, axis=1, keepdims=False):
    """Max-shifted log-sum-exp along ``axis``."""
    m = np.max(a, axis=axis, keepdims=True)
    if np.isfinite(m).all():
        # the maximal term contributes exp(0) = 1, so the sum is never zero
        out = np.log(np.exp(a - m).sum(axis=axis, keepdims=True)) + m
    else:
        m = np.where(np.isfinite(m), m, 0.0)
        with np.errstate(divide="ignore"):
            out = np.log(np.exp(a - m).sum(axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def _as_matrix(a, cols=None, name="array"):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1 and a.size == 0:
        a = a.reshape(0, cols or 0)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be two-dimensional, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class DataSet:
    """Labelled block (features + indicator rows) and unlabelled block."""

    labelled_x: np.ndarray
    labelled_z: np.ndarray
    unlabelled_x: np.ndarray

    def __post_init__(self):
        lx = _as_matrix(self.labelled_x, name="labelled_x")
        ux = _as_matrix(self.unlabelled_x, name="unlabelled_x")
        lz = _as_matrix(self.labelled_z, name="labelled_z")
        object.__setattr__(self, "labelled_x", lx)
        object.__setattr__(self, "unlabelled_x", ux)
        object.__setattr__(self, "labelled_z", lz)
        if lx.shape[0] + ux.shape[0] < 1:
            raise DimensionError("data set has no rows")
        if lx.shape[0] and ux.shape[0] and lx.shape[1] != ux.shape[1]:
            raise DimensionError("labelled and unlabelled blocks have different widths")
        if lz.shape[0] != lx.shape[0]:
            raise DimensionError("labelled_z must have one row per labelled observation")
        if lz.size and not (
            np.all((lz == 0) | (lz == 1)) and np.all(lz.sum(axis=1) == 1)
        ):
            raise DomainError("labelled_z rows must be 0/1 indicators summing to 1")
        if not (np.all(np.isfinite(lx)) and np.all(np.isfinite(ux))):
            raise DomainError("data contain non-finite values")

    @classmethod
    def from_labels(cls, x, labels, n_groups: int | None = None) -> "DataSet":
        """Build from an N x p matrix and integer labels (negative = unlabelled).

        Row order is labelled rows first, each block keeping input order.
        """
        x = _as_matrix(x, name="x")
        labels = np.asarray(labels, dtype=int)
        known = labels >= 0
        G = n_groups if n_groups is not None else int(labels.max(initial=-1)) + 1
        z = np.zeros((int(known.sum()), G))
        z[np.arange(z.shape[0]), labels[known]] = 1.0
        return cls(x[known], z, x[~known])

    @property
    def n1(self) -> int:
        return self.labelled_x.shape[0]

    @property
    def n2(self) -> int:
        return self.unlabelled_x.shape[0]

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    @property
    def p(self) -> int:
        return self.labelled_x.shape[1] if self.n1 else self.unlabelled_x.shape[1]

    @property
    def n_groups(self) -> int:
        return self.labelled_z.shape[1]

    @property
    def all_x(self) -> np.ndarray:
        if self.n1 == 0:
            return self.unlabelled_x
        if self.n2 == 0:
            return self.labelled_x
        return np.vstack([self.labelled_x, self.unlabelled_x])

    @property
    def labelled_classes(self) -> np.ndarray:
        return np.argmax(self.labelled_z, axis=1) if self.n1 else np.zeros(0, dtype=int)

    def padded(self, H: int) -> "DataSet":
        """Zero-pad the indicator columns out to ``H`` components."""
        G = self.n_groups
        if H < G:
            raise DomainError(f"cannot pad {G} label columns down to {H}")
        if H == G:
            return self
        z = np.hstack([self.labelled_z, np.zeros((self.n1, H - G))])
        return DataSet(self.labelled_x, z, self.unlabelled_x)


@dataclass(frozen=True)
class WeightConfig:
    alpha: float = 0.5
    likelihood_variant: str = "original"

    def __post_init__(self):
        a = float(self.alpha)
        if not 0.0 <= a <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")
        object.__setattr__(self, "alpha", a)
        v = str(self.likelihood_variant).lower()
        if v == "alt":
            v = "alternative"
        if v not in VARIANTS:
            raise DomainError(f"unknown likelihood variant {self.likelihood_variant!r}")
        object.__setattr__(self, "likelihood_variant", v)

    def row_weights(self, n1: int, n2: int) -> np.ndarray:
        return np.concatenate([np.full(n1, self.alpha), np.full(n2, 1.0 - self.alpha)])


@dataclass(frozen=True)
class MixtureModel:
    family: str
    weights: np.ndarray
    locations: np.ndarray
    scales: np.ndarray
    dof: Optional[np.ndarray] = None
    structure: str = "UUUU"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        w = np.asarray(self.weights, dtype=float).ravel()
        mu = np.atleast_2d(np.asarray(self.locations, dtype=float))
        sig = np.asarray(self.scales, dtype=float)
        if sig.ndim == 2:
            sig = sig[None]
        G = w.size
        if mu.shape[0] != G or sig.shape != (G, mu.shape[1], mu.shape[1]):
            raise DimensionError(
                f"inconsistent parameter shapes: weights {w.shape}, "
                f"locations {mu.shape}, scales {sig.shape}"
            )
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-10:
            raise DomainError("mixing proportions must be positive and sum to one")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "locations", mu)
        object.__setattr__(self, "scales", sig)
        object.__setattr__(self, "structure", CovarianceStructure.parse(self.structure).code)
        if self.family == "t":
            if self.dof is None:
                raise DomainError("t family requires degrees of freedom")
            nu = np.broadcast_to(np.asarray(self.dof, dtype=float), (G,)).copy()
            if np.any(~np.isfinite(nu)) or np.any(nu <= 0):
                raise DomainError("degrees of freedom must be positive and finite")
            object.__setattr__(self, "dof", nu)
        else:
            object.__setattr__(self, "dof", None)
        _ = self._cholesky  # validates every scale matrix

    @classmethod
    def _trusted(cls, family, weights, locations, scales, dof, structure,
                 same_scales_as: "MixtureModel | None" = None) -> "MixtureModel":
        """Skip shape checks for arrays built inside the fitting loop; SPD is still checked.

        ``same_scales_as`` names a model whose scale matrices are reused, so
        its factorisation is shared instead of recomputed.
        """
        obj = object.__new__(cls)
        obj.__dict__.update(family=family, weights=weights, locations=locations, scales=scales,
                            dof=dof, structure=structure)
        if same_scales_as is not None:
            obj.__dict__["_cholesky"] = same_scales_as._cholesky
            obj.__dict__["_inverse_factors"] = same_scales_as._inverse_factors
        else:
            _ = obj._cholesky
        return obj

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def p(self) -> int:
        return self.locations.shape[1]

    @cached_property
    def _cholesky(self) -> tuple[np.ndarray, np.ndarray]:
        return factorize_spd_stack(self.scales)

    @property
    def factors(self) -> tuple[SpdFactor, ...]:
        L, logdet = self._cholesky
        return tuple(SpdFactor(L[g], float(logdet[g])) for g in range(self.n_components))

    @property
    def log_determinants(self) -> np.ndarray:
        return self._cholesky[1]

    @cached_property
    def _inverse_factors(self) -> np.ndarray:
        return np.linalg.inv(self._cholesky[0])

    def log_densities(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Per-component log densities and squared Mahalanobis distances (n x G each)."""
        x = _as_matrix(x, cols=self.p, name="x")
        if x.shape[0] == 0:
            return np.empty((0, self.n_components)), np.empty((0, self.n_components))
        # y[g, n] = L_g^{-1} (x_n - mu_g)
        y = np.matmul(x[None] - self.locations[:, None, :], self._inverse_factors.transpose(0, 2, 1))
        delta = (y * y).sum(axis=2).T
        if self.family == "gaussian":
            return -0.5 * (self.p * LOG_2PI + self.log_determinants + delta), delta
        nu = self.dof
        return self._t_constant - 0.5 * (nu + self.p) * np.log1p(delta / nu), delta

    @cached_property
    def _t_constant(self) -> np.ndarray:
        nu, p = self.dof, self.p
        return (gammaln((nu + p) / 2.0) - gammaln(nu / 2.0) - 0.5 * p * np.log(np.pi * nu)
                - 0.5 * self.log_determinants)


def _log_density_from_delta(family, delta, log_det, p, nu=None):
    if family == "gaussian":
        return -0.5 * (p * LOG_2PI + log_det + delta)
    c = (
        gammaln((nu + p) / 2.0)
        - gammaln(nu / 2.0)
        - 0.5 * p * np.log(np.pi * nu)
        - 0.5 * log_det
    )
    return c - 0.5 * (nu + p) * np.log1p(delta / nu)


def log_density(family: str, x, location, scale, dof: float | None = None):
    """Log density of one Gaussian or t component at ``x`` (vector or rows)."""
    if family not in FAMILIES:
        raise DomainError(f"unknown family {family!r}")
    fac = scale if isinstance(scale, SpdFactor) else factorize_spd(scale)
    location = np.atleast_1d(np.asarray(location, dtype=float))
    d = mahalanobis_sq(x, location, fac)
    if family == "t" and not (dof is not None and dof > 0):
        raise DomainError("t density requires positive degrees of freedom")
    out = _log_density_from_delta(family, np.asarray(d), fac.log_determinant, location.size, dof)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Responsibilities:
    labelled_z_hat: np.ndarray
    unlabelled_z_hat: np.ndarray
    w_hat: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("labelled_z_hat", "unlabelled_z_hat"):
            a = getattr(self, name)
            if a.size:
                if np.any(a < 0) or np.any(a > 1):
                    raise DomainError(f"{name} entries must lie in [0, 1]")
                if np.max(np.abs(a.sum(axis=1) - 1.0)) > 1e-10:
                    raise DomainError(f"{name} rows must sum to one")
        if self.w_hat is not None and np.any(self.w_hat <= 0):
            raise DomainError("latent scale weights must be positive")

    @property
    def all_z(self) -> np.ndarray:
        return np.vstack([self.labelled_z_hat, self.unlabelled_z_hat])

    @property
    def n_components(self) -> int:
        return self.labelled_z_hat.shape[1]


def _labelled_term(logpf_lab, labelled_z):
    if logpf_lab.shape[0] == 0:
        return 0.0
    cls = np.argmax(labelled_z, axis=1)
    return float(np.sum(np.take_along_axis(logpf_lab, cls[:, None], axis=1)))


def loglik_from_log_joint(logpf_lab, logpf_unl, labelled_z, cfg: WeightConfig) -> float:
    """Weighted observed log-likelihood from log(pi_g f_g) matrices of each block."""
    a = cfg.alpha
    lab = a * _labelled_term(logpf_lab, labelled_z) if a > 0 else 0.0
    if logpf_unl.shape[0] == 0 or a == 1.0:
        return lab
    if cfg.likelihood_variant == "original":
        return lab + (1.0 - a) * float(np.sum(logsumexp(logpf_unl, axis=1)))
    return lab + float(np.sum(logsumexp((1.0 - a) * logpf_unl, axis=1)))


def log_joint(model: MixtureModel, x) -> np.ndarray:
    logf, _ = model.log_densities(x)
    return logf + np.log(model.weights)


def weighted_observed_loglik(model: MixtureModel, data: DataSet, cfg: WeightConfig) -> float:
    _check_components(model, data)
    lab = log_joint(model, data.labelled_x) if cfg.alpha > 0 else np.empty((0, model.n_components))
    unl = log_joint(model, data.unlabelled_x)
    return loglik_from_log_joint(lab, unl, data.labelled_z, cfg)


def complete_data_loglik(model: MixtureModel, data: DataSet, resp: Responsibilities,
                         cfg: WeightConfig) -> float:
    _check_components(model, data)
    if resp.labelled_z_hat.shape != data.labelled_z.shape or resp.unlabelled_z_hat.shape != (
        data.n2,
        model.n_components,
    ):
        raise DimensionError("responsibilities do not conform to the data")
    total = 0.0
    for a, x, z in (
        (cfg.alpha, data.labelled_x, resp.labelled_z_hat),
        (1.0 - cfg.alpha, data.unlabelled_x, resp.unlabelled_z_hat),
    ):
        if a == 0 or x.shape[0] == 0:
            continue
        lp = log_joint(model, x)
        total += a * float(np.sum(np.where(z > 0, z * lp, 0.0)))
    return total


def _check_components(model, data):
    if data.n_groups != model.n_components:
        raise DimensionError(
            f"model has {model.n_components} components but labels have {data.n_groups} columns"
        )
    if data.p != model.p:
        raise DimensionError(f"model dimension {model.p} != data dimension {data.p}")
