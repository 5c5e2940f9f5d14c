"""Model- and weight-selection criteria and the adjusted Rand index."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, NotPositiveDefinite
from .model import DataSet, WeightConfig, weighted_observed_loglik
from .numerics import factorize_spd

RESP_FLOOR = 1e-300

# Criterion name -> direction of the preferred extremum.
DIRECTIONS = {
    "BIC": "max",
    "ICL": "max",
    "E": "max",
    "A": "max",
    "U": "max",
    "trW": "min",
    "detW": "min",
    "ARI": "max",
}
CRITERIA = tuple(DIRECTIONS)


@dataclass(frozen=True)
class ScatterDecomposition:
    total_S: np.ndarray
    within_W: np.ndarray
    between_B: np.ndarray
    group_means: np.ndarray
    grand_mean: np.ndarray
    group_sizes: np.ndarray


def _as_labels(partition) -> np.ndarray:
    labels = np.asarray(partition)
    if labels.ndim != 1:
        raise DimensionError("a partition is a one-dimensional label vector")
    return labels


def map_partition(z) -> np.ndarray:
    """Row-wise argmax of a responsibility matrix; the lowest index wins ties."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise DimensionError("responsibilities must be a matrix")
    return np.argmax(z, axis=1)


def _map_mask(z):
    mask = np.zeros_like(z, dtype=bool)
    if z.shape[0]:
        mask[np.arange(z.shape[0]), np.argmax(z, axis=1)] = True
    return mask


def _safe_log(z):
    return np.log(np.clip(z, RESP_FLOOR, 1.0))


def classification_criterion(kind: str, z) -> float:
    """Entropy-type criteria over unlabelled responsibilities ``z`` (n2 x G).

    ``E`` keeps only the MAP term of each row, ``A`` is the full entropy
    sum, ``U`` sums ``min_g (1 - z_jg)`` per row.  Zero entries contribute
    zero to ``E`` and ``A``.
    """
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        return 0.0
    if kind == "E":
        # the MAP indicator keeps a single term per row: log of the row maximum
        return float(np.sum(_safe_log(z[_map_mask(z)])))
    if kind == "A":
        return float(np.sum(np.where(z > 0, z * _safe_log(z), 0.0)))
    if kind == "U":
        return float(np.sum(np.min(1.0 - z, axis=1)))
    raise DomainError(f"unknown classification criterion {kind!r}")


def information_criterion(kind: str, fit, data: DataSet, param_count: int) -> float:
    """BIC = 2 l - k log N with the original weighted log-likelihood; ICL adds 2E."""
    weight = WeightConfig(fit.weight.alpha, "original")
    ll = weighted_observed_loglik(fit.model, data.padded(fit.model.n_components), weight)
    bic = 2.0 * ll - param_count * math.log(data.n)
    if kind == "BIC":
        return bic
    if kind == "ICL":
        return bic + 2.0 * classification_criterion("E", fit.responsibilities.unlabelled_z_hat)
    raise DomainError(f"unknown information criterion {kind!r}")


def scatter_decomposition(x, partition) -> ScatterDecomposition:
    x = np.asarray(x, dtype=float)
    labels = _as_labels(partition)
    if x.ndim != 2 or labels.shape[0] != x.shape[0]:
        raise DimensionError("partition length must match the number of rows")
    p = x.shape[1]
    grand = x.mean(axis=0) if x.shape[0] else np.zeros(p)
    groups = np.unique(labels)
    means = np.empty((groups.size, p))
    sizes = np.empty(groups.size, dtype=int)
    W = np.zeros((p, p))
    B = np.zeros((p, p))
    for k, g in enumerate(groups):
        xg = x[labels == g]
        means[k] = xg.mean(axis=0)
        sizes[k] = xg.shape[0]
        d = xg - means[k]
        W += d.T @ d
        e = means[k] - grand
        B += sizes[k] * np.outer(e, e)
    d = x - grand
    return ScatterDecomposition(d.T @ d, W, B, means, grand, sizes)


def scatter_criterion(kind: str, decomposition: ScatterDecomposition) -> float:
    W = decomposition.within_W
    if kind == "trW":
        return float(np.trace(W))
    if kind == "detW":
        if not np.any(W):
            return 0.0
        try:
            return math.exp(factorize_spd(W).log_determinant)
        except NotPositiveDefinite:
            return max(float(np.linalg.det(W)), 0.0)
    raise DomainError(f"unknown scatter criterion {kind!r}")


def _comb2(n):
    n = np.asarray(n, dtype=np.int64)
    return n * (n - 1) // 2


def ari(p1, p2) -> float:
    """Hubert-Arabie adjusted Rand index from the contingency table."""
    a, b = _as_labels(p1), _as_labels(p2)
    if a.shape != b.shape:
        raise DimensionError("partitions must have equal length")
    n = a.size
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max(initial=-1) + 1, ib.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    index = int(_comb2(table).sum())
    rows = int(_comb2(table.sum(axis=1)).sum())
    cols = int(_comb2(table.sum(axis=0)).sum())
    total = n * (n - 1) // 2
    # (index - rows*cols/total) / ((rows+cols)/2 - rows*cols/total), cleared of
    # fractions so the only rounding is the final division of two integers
    num = 2 * (index * total - rows * cols)
    den = (rows + cols) * total - 2 * rows * cols
    if den == 0:
        # both partitions trivial (all singletons or one block), or n < 2
        return 1.0
    return num / den


def scoring_partition(fit, data: DataSet, points: str = "all") -> tuple[np.ndarray, np.ndarray]:
    """Rows and labels entering the scatter criteria.

    ``all`` uses known classes for labelled rows and MAP labels elsewhere;
    ``unlabelled`` restricts to the unlabelled block.
    """
    unl = map_partition(fit.responsibilities.unlabelled_z_hat)
    if points == "unlabelled":
        return data.unlabelled_x, unl
    if points != "all":
        raise DomainError(f"unknown point set {points!r}")
    return data.all_x, np.concatenate([data.labelled_classes, unl])


def evaluate_all(fit, data: DataSet, param_count: int, truth=None,
                 scatter_points: str = "all", ari_points: str = "all") -> dict:
    """Every criterion for one fit; ``ARI`` only when ``truth`` (all N rows) is given."""
    z_unl = fit.responsibilities.unlabelled_z_hat
    x, labels = scoring_partition(fit, data, scatter_points)
    dec = scatter_decomposition(x, labels)
    out = {
        "BIC": information_criterion("BIC", fit, data, param_count),
        "E": classification_criterion("E", z_unl),
        "A": classification_criterion("A", z_unl),
        "U": classification_criterion("U", z_unl),
        "trW": scatter_criterion("trW", dec),
        "detW": scatter_criterion("detW", dec),
    }
    out["ICL"] = out["BIC"] + 2.0 * out["E"]
    if truth is not None:
        out["ARI"] = score_ari(fit, truth, data.n1, ari_points)
    return out


def score_ari(fit, truth, n1: int, points: str = "all") -> float:
    truth = np.asarray(truth)
    pred = np.asarray(fit.map_partition)
    if points == "unlabelled":
        return ari(pred[n1:], truth[n1:])
    return ari(pred, truth)
