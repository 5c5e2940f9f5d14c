"""Weighted EM (Gaussian) and multicycle ECM (multivariate t) fitting."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import psi

from .errors import (
    DegenerateComponent,
    DimensionError,
    DomainError,
    FitFailed,
    NoBracket,
    NotPositiveDefinite,
    TooFewPoints,
    UnderDeterminedWarning,
    Unsupported,
)
from .model import (
    FAMILIES,
    DataSet,
    MixtureModel,
    Responsibilities,
    WeightConfig,
    loglik_from_log_joint,
    logsumexp,
)
from .numerics import RootBracket, find_root, make_rng
from .structures import MASS_FLOOR, CovarianceStructure, project_structure

log = logging.getLogger(__name__)

STALL_TOL = 1e-12


@dataclass(frozen=True)
class FitConfig:
    n_starts: int = 50
    max_iterations: int = 1000
    aitken_epsilon: float = 1e-5
    nu_bracket: RootBracket = field(default_factory=lambda: RootBracket(2.0, 200.0, 1e-6))
    constrain_nu: bool = False
    weight: WeightConfig = field(default_factory=WeightConfig)
    seed: int = 0
    n_em_restarts: int = 1
    initial_nu: float = 50.0

    def __post_init__(self):
        if self.n_starts < 1 or self.n_em_restarts < 1:
            raise DomainError("n_starts and n_em_restarts must be at least 1")
        if not self.aitken_epsilon > 0:
            raise DomainError("aitken_epsilon must be positive")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be at least 1")

    def with_alpha(self, alpha: float, seed: int | None = None) -> "FitConfig":
        w = WeightConfig(alpha, self.weight.likelihood_variant)
        return replace(self, weight=w, seed=self.seed if seed is None else seed)


@dataclass(frozen=True)
class FitResult:
    model: MixtureModel
    responsibilities: Responsibilities
    loglik_trace: tuple
    converged: bool
    n_iterations: int
    map_partition: np.ndarray
    weight: WeightConfig
    nu_at_boundary: tuple = ()
    restart_causes: tuple = ()

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    @property
    def structure(self) -> str:
        return self.model.structure

    @property
    def family(self) -> str:
        return self.model.family


# --- initialisation -----------------------------------------------------------


def _lloyd(X, G, rng, max_iter=100):
    n = X.shape[0]
    centres = X[rng.choice(n, size=G, replace=False)].copy()
    labels = None
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        counts = np.bincount(new, minlength=G)
        for k in np.flatnonzero(counts == 0):
            # hand the empty cluster the point farthest from its own centre
            far = int(np.argmax(d2[np.arange(n), new]))
            new[far] = k
            d2[far, :] = 0.0
            counts = np.bincount(new, minlength=G)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(G):
            centres[k] = X[labels == k].mean(axis=0)
    wcss = float(((X - centres[labels]) ** 2).sum())
    return labels, wcss


def align_to_classes(clusters: np.ndarray, classes: np.ndarray, G: int) -> np.ndarray:
    """Permutation ``perm`` with ``perm[cluster] = component`` maximising agreement.

    Agreement is the count of labelled rows whose cluster maps to their class;
    the assignment is a one-to-one majority vote, ties resolved toward the
    lowest index by the solver's deterministic ordering.
    """
    table = np.zeros((G, G))
    np.add.at(table, (clusters, classes), 1.0)
    rows, cols = linear_sum_assignment(table, maximize=True)
    perm = np.empty(G, dtype=int)
    perm[rows] = cols
    return perm


def kmeans_init(data: DataSet, G: int, cfg: FitConfig) -> Responsibilities:
    """Hard responsibilities from the best of ``cfg.n_starts`` Lloyd runs.

    At alpha = 0 only the unlabelled rows are clustered, so labelled
    features never enter the fit.  Otherwise all rows are clustered and
    cluster indices are matched to the labelled classes.
    """
    if G < 1:
        raise DomainError("G must be at least 1")
    if data.n_groups != G:
        raise DimensionError(f"labels have {data.n_groups} columns, expected {G}")
    use_labelled = cfg.weight.alpha > 0 and data.n1 > 0
    X = data.all_x if use_labelled else data.unlabelled_x
    if X.shape[0] < G:
        raise TooFewPoints(f"{X.shape[0]} rows available to initialise {G} components")
    rng = make_rng(cfg.seed)
    best, best_wcss = None, math.inf
    for _ in range(cfg.n_starts):
        labels, wcss = _lloyd(X, G, rng)
        if wcss < best_wcss:
            best, best_wcss = labels, wcss
    if use_labelled:
        perm = align_to_classes(best[: data.n1], data.labelled_classes, G)
        best = perm[best]
        unl = best[data.n1:]
    else:
        unl = best
    z_unl = np.zeros((data.n2, G))
    z_unl[np.arange(data.n2), unl] = 1.0
    return Responsibilities(data.labelled_z.copy(), z_unl, None)


# --- E step ---------------------------------------------------------------------


class _Problem:
    """Arrays shared by every iteration of one fit."""

    def __init__(self, data: DataSet, weight: WeightConfig):
        self.data = data
        self.weight = weight
        self.n1, self.n2 = data.n1, data.n2
        self.X = data.all_x
        self.labelled_z = data.labelled_z
        self.classes = data.labelled_classes
        self.need_lab = weight.alpha > 0 and data.n1 > 0
        a = weight.row_weights(data.n1, data.n2)
        self.keep = a > 0
        self.Xk = self.X[self.keep]
        self.ak = a[self.keep][:, None]
        # rows whose densities are evaluated; labelled rows are skipped at alpha = 0
        self.X_eval = self.X if self.need_lab else data.unlabelled_x


def _posterior(logpf, weight: WeightConfig, lse=None):
    if logpf.shape[0] == 0:
        return np.empty_like(logpf)
    a = weight.alpha
    if weight.likelihood_variant == "original" or a == 1.0:
        s = logpf
    else:
        s, lse = (1.0 - a) * logpf, None
    if lse is None:
        lse = logsumexp(s, axis=1)
    z = np.exp(s - lse[:, None])
    return z / z.sum(axis=1, keepdims=True)


def _estep(model: MixtureModel, prob: _Problem):
    """All-row responsibilities, latent scale weights and weighted log-likelihood."""
    G, p, n1 = model.n_components, model.p, prob.n1
    logf, delta = model.log_densities(prob.X_eval)
    lp = logf + np.log(model.weights)
    if prob.need_lab:
        lp_l, lp_u, d_l, d_u = lp[:n1], lp[n1:], delta[:n1], delta[n1:]
    else:
        lp_l, lp_u, d_l, d_u = lp[:0], lp, delta[:0], delta
    weight = prob.weight
    a = weight.alpha
    lse = None
    if weight.likelihood_variant == "original" and lp_u.shape[0]:
        lse = logsumexp(lp_u, axis=1)
    if weight.likelihood_variant == "original":
        ll = a * float(lp_l[np.arange(n1), prob.classes].sum()) if prob.need_lab else 0.0
        if a < 1.0 and lse is not None:
            ll += (1.0 - a) * float(lse.sum())
    else:
        ll = loglik_from_log_joint(lp_l, lp_u, prob.labelled_z, weight)
    z = np.empty((n1 + prob.n2, G))
    z[:n1] = prob.labelled_z
    z[n1:] = _posterior(lp_u, weight, lse)
    w = None
    if model.family == "t":
        nu = model.dof
        w = np.ones((n1 + prob.n2, G))
        if prob.need_lab:
            w[:n1] = (nu + p) / (nu + d_l)
        w[n1:] = (nu + p) / (nu + d_u)
    return z, w, ll


def _as_responsibilities(z, w, n1):
    return Responsibilities(z[:n1], z[n1:], w)


def e_step(model: MixtureModel, data: DataSet, cfg) -> Responsibilities:
    weight = cfg.weight if isinstance(cfg, FitConfig) else cfg
    z, w, _ = _estep(model, _Problem(data, weight))
    return _as_responsibilities(z, w, data.n1)


# --- M / CM steps -------------------------------------------------------------------


def _masses(A):
    m = A.sum(axis=0)
    for g, mg in enumerate(m):
        if not mg > MASS_FLOOR:
            raise DegenerateComponent(g, float(mg))
    return m


def _scatters(X, A, mu):
    G, p = mu.shape
    out = np.empty((G, p, p))
    for g in range(G):
        d = X - mu[g]
        out[g] = (d * A[:, g : g + 1]).T @ d
    return out


def _mstep_gaussian(prob: _Problem, z, structure) -> MixtureModel:
    A = z[prob.keep] * prob.ak
    m = _masses(A)
    mu = (A.T @ prob.Xk) / m[:, None]
    sigma = project_structure(structure, _scatters(prob.Xk, A, mu), m)
    return MixtureModel._trusted("gaussian", m / m.sum(), mu, sigma, None, structure)


def m_step_gaussian(data: DataSet, resp: Responsibilities, cfg, structure="UUUU") -> MixtureModel:
    """Closed-form weighted M-step; zero-weight rows are never read."""
    weight = cfg.weight if isinstance(cfg, FitConfig) else cfg
    return _mstep_gaussian(_Problem(data, weight), resp.all_z, CovarianceStructure.parse(structure).code)


def nu_equation(nu_old: float, p: int, mean_logw_minus_w: float):
    """Left-hand side of the degrees-of-freedom score equation as a function of nu."""
    const = 1.0 + mean_logw_minus_w + float(psi((nu_old + p) / 2.0)) - math.log((nu_old + p) / 2.0)

    def f(nu):
        # the bracket keeps nu / 2 >= 1, so the unchecked psi is safe here
        return -float(psi(nu / 2.0)) + math.log(nu / 2.0) + const

    return f


def solve_nu(nu_old: float, p: int, mean_logw_minus_w: float, bracket: RootBracket):
    """Returns ``(nu, at_boundary)``; a missing sign change adopts the nearer end."""
    f = nu_equation(nu_old, p, mean_logw_minus_w)
    try:
        return find_root(f, bracket), False
    except NoBracket as exc:
        # f decreases in nu: positive at both ends puts the root above hi
        return (bracket.hi if exc.f_hi > 0 else bracket.lo), True


def _cm_steps(prob: _Problem, z, w, previous: MixtureModel, cfg: FitConfig, structure):
    p = previous.p
    A = z[prob.keep] * prob.ak
    W = w[prob.keep]
    m = _masses(A)
    pi = m / m.sum()
    AW = A * W
    mu = (AW.T @ prob.Xk) / AW.sum(axis=0)[:, None]

    s = (A * (np.log(W) - W)).sum(axis=0)
    G = m.size
    if cfg.constrain_nu or structure.constrained_dof:
        nu_val, hit = solve_nu(previous.dof[0], p, s.sum() / m.sum(), cfg.nu_bracket)
        nu = np.full(G, nu_val)
        flags = (hit,) * G
    else:
        sol = [solve_nu(previous.dof[g], p, s[g] / m[g], cfg.nu_bracket) for g in range(G)]
        nu = np.array([v for v, _ in sol])
        flags = tuple(h for _, h in sol)

    mid = MixtureModel._trusted("t", pi, mu, previous.scales, nu, structure.code,
                                same_scales_as=previous)
    z2, w2, _ = _estep(mid, prob)
    A2 = z2[prob.keep] * prob.ak
    m2 = _masses(A2)
    sigma = project_structure(structure, _scatters(prob.Xk, A2 * w2[prob.keep], mu), m2)
    return MixtureModel._trusted("t", pi, mu, sigma, nu, structure.code), flags


def cm_steps_t(data: DataSet, resp: Responsibilities, previous: MixtureModel, cfg: FitConfig,
               structure=None, return_flags=False):
    """One multicycle ECM iteration: CM1 (pi, mu, nu), E, CM2 (scale)."""
    structure = CovarianceStructure.parse(structure or previous.structure)
    if resp.w_hat is None:
        raise DomainError("t-family CM steps need latent scale weights")
    model, flags = _cm_steps(_Problem(data, cfg.weight), resp.all_z, resp.w_hat, previous,
                             cfg, structure)
    return (model, flags) if return_flags else model


# --- convergence --------------------------------------------------------------------


def aitken_converged(loglik_trace, epsilon: float) -> bool:
    """Aitken-accelerated stopping rule on the last three log-likelihoods."""
    if len(loglik_trace) < 3:
        return False
    l0, l1, l2 = (float(v) for v in loglik_trace[-3:])
    step = l2 - l1
    if step < STALL_TOL:
        return True
    prev = l1 - l0
    if prev == 0.0:
        return False
    a = step / prev
    if a >= 1.0:
        return False
    l_inf = l1 + step / (1.0 - a)
    return 0.0 <= l_inf - l2 < epsilon


# --- driver ---------------------------------------------------------------------------


def _permute_model(model: MixtureModel, perm: np.ndarray) -> MixtureModel:
    """Reorder components so that old component ``k`` becomes ``perm[k]``."""
    inv = np.argsort(perm)
    return MixtureModel(
        model.family,
        model.weights[inv],
        model.locations[inv],
        model.scales[inv],
        None if model.dof is None else model.dof[inv],
        model.structure,
    )


def _align_cluster_fit(model, z, w, data):
    """At alpha = 0, relabel fitted components to agree with the known classes."""
    logf, _ = model.log_densities(data.labelled_x)
    clusters = np.argmax(logf + np.log(model.weights), axis=1)
    perm = align_to_classes(clusters, data.labelled_classes, model.n_components)
    if np.array_equal(perm, np.arange(perm.size)):
        return model, z, w
    inv = np.argsort(perm)
    n1 = data.n1
    z = np.vstack([z[:n1], z[n1:, inv]])
    if w is not None:
        w = w[:, inv]
    return _permute_model(model, perm), z, w


def map_labels(resp: Responsibilities) -> np.ndarray:
    """MAP component index (0-based) per row; lowest index wins ties."""
    return np.argmax(resp.all_z, axis=1)


def run_em(data: DataSet, family: str, structure, cfg: FitConfig,
           init: Responsibilities) -> FitResult:
    """Iterate from given initial responsibilities until the Aitken rule fires."""
    structure = CovarianceStructure.parse(structure)
    if cfg.constrain_nu and not structure.constrained_dof:
        structure = structure.with_dof("C")
    prob = _Problem(data, cfg.weight)
    model = _mstep_gaussian(prob, init.all_z, structure.code)
    if family == "t":
        model = MixtureModel("t", model.weights, model.locations, model.scales,
                             np.full(model.n_components, cfg.initial_nu), structure.code)
    z, w, ll = _estep(model, prob)
    trace = [ll]
    flags: tuple = ()
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        if family == "gaussian":
            model = _mstep_gaussian(prob, z, structure.code)
        else:
            model, flags = _cm_steps(prob, z, w, model, cfg, structure)
        z, w, ll = _estep(model, prob)
        if not math.isfinite(ll):
            raise NotPositiveDefinite(0, None, "log-likelihood became non-finite")
        trace.append(ll)
        if aitken_converged(trace, cfg.aitken_epsilon):
            converged = True
            break
    if cfg.weight.alpha == 0.0 and data.n1 > 0:
        model, z, w = _align_cluster_fit(model, z, w, data)
    resp = _as_responsibilities(z, w, data.n1)
    return FitResult(
        model=model,
        responsibilities=resp,
        loglik_trace=tuple(trace),
        converged=converged,
        n_iterations=it,
        map_partition=np.argmax(z, axis=1),
        weight=cfg.weight,
        nu_at_boundary=tuple(flags),
    )


_NUMERICAL = (DegenerateComponent, NotPositiveDefinite, TooFewPoints, FloatingPointError)


def fit(data: DataSet, G: int, family: str = "gaussian", structure="UUUU",
        cfg: FitConfig | None = None, init: Responsibilities | None = None) -> FitResult:
    """Fit a G-component FSC mixture.

    Each EM restart ``r`` is initialised by ``kmeans_init`` seeded with
    ``cfg.seed + r``; the restart with the highest final weighted
    log-likelihood is returned.  A supplied ``init`` replaces the k-means
    step and runs a single restart, which lets callers share one
    initialisation across several structures.  Restarts that fail numerically are
    discarded; if all fail, ``FitFailed`` carries the causes.
    """
    cfg = cfg or FitConfig()
    if family not in FAMILIES:
        raise DomainError(f"unknown family {family!r}")
    s = CovarianceStructure.parse(structure)
    if not s.implemented:
        raise Unsupported(f"structure {s.code} cannot be fitted")
    if data.n_groups < G:
        data = data.padded(G)
    elif data.n_groups > G:
        raise DimensionError(f"labels use {data.n_groups} classes but G = {G}")
    if cfg.weight.alpha == 1.0 and data.n1 < G * (data.p + 1):
        warnings.warn(
            f"discriminant fit with {data.n1} labelled rows for {G} components in "
            f"{data.p} dimensions is under-determined",
            UnderDeterminedWarning,
            stacklevel=2,
        )
    best: Optional[FitResult] = None
    causes = []
    n_restarts = 1 if init is not None else cfg.n_em_restarts
    for r in range(n_restarts):
        try:
            start = init if init is not None else kmeans_init(data, G, replace(cfg, seed=cfg.seed + r))
            with np.errstate(over="raise", invalid="raise", divide="raise"):
                res = run_em(data, family, s, cfg, start)
        except _NUMERICAL as exc:
            log.debug("restart %d failed: %s", r, exc)
            causes.append(exc)
            continue
        if best is None or res.loglik > best.loglik:
            best = res
    if best is None:
        raise FitFailed(causes)
    return replace(best, restart_causes=tuple(str(c) for c in causes))
