"""Parsimonious scale-matrix structures (the tEIGEN family).

A structure is a four-letter code: volume, orientation, shape and degrees
of freedom, each ``C`` (constrained equal across components), ``U``
(unconstrained) or ``I`` (identity; orientation and shape only).  All 28
codes can be counted; only those with a closed-form (or convex
coordinate-ascent) scale update can be fitted, see ``IMPLEMENTED``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateComponent, Unsupported

MASS_FLOOR = 1e-8

# Row order and free-parameter expressions as tabulated for the tEIGEN family.
_TABLE = {
    "CIIC": lambda G, p: 1 + 1,
    "CIIU": lambda G, p: 1 + G,
    "UIIC": lambda G, p: (G - 1) + 1,
    "UIIU": lambda G, p: (G - 1) + G,
    "CICC": lambda G, p: p + 1,
    "CICU": lambda G, p: p + G,
    "UICC": lambda G, p: p + (G - 1) + 1,
    "UICU": lambda G, p: p + (G - 1) + G,
    "CIUC": lambda G, p: G * p - (G - 1) + 1,
    "CIUU": lambda G, p: G * p - (G - 1) + G,
    "UIUC": lambda G, p: G * p + 1,
    "UIUU": lambda G, p: G * p + G,
    "CCCC": lambda G, p: p * (p + 1) // 2 + 1,
    "CCCU": lambda G, p: p * (p + 1) // 2 + G,
    "UCCC": lambda G, p: p * (p + 1) // 2 + (G - 1) + 1,
    "UCCU": lambda G, p: p * (p + 1) // 2 + (G - 1) + G,
    "CUCC": lambda G, p: G * (p * (p + 1) // 2) - (G - 1) * p + 1,
    "CUCU": lambda G, p: G * (p * (p + 1) // 2) - (G - 1) * p + G,
    "UUCC": lambda G, p: G * (p * (p + 1) // 2) - (G - 1) * (p - 1) + 1,
    "UUCU": lambda G, p: G * (p * (p + 1) // 2) - (G - 1) * (p - 1) + G,
    "CCUC": lambda G, p: p * (p + 1) // 2 + (G - 1) * (p - 1) + 1,
    "CCUU": lambda G, p: p * (p + 1) // 2 + (G - 1) * (p - 1) + G,
    "CUUC": lambda G, p: G * (p * (p + 1) // 2) - (G - 1) + 1,
    "CUUU": lambda G, p: G * (p * (p + 1) // 2) - (G - 1) + G,
    "UCUC": lambda G, p: G * (p * (p + 1) // 2) + (G - 1) * p + 1,
    "UCUU": lambda G, p: G * (p * (p + 1) // 2) + (G - 1) * p + G,
    "UUUC": lambda G, p: G * (p * (p + 1) // 2) + 1,
    "UUUU": lambda G, p: G * (p * (p + 1) // 2) + G,
}

ALL_CODES = tuple(_TABLE)
IMPLEMENTED = tuple(c for c in ALL_CODES if c[1] == "I") + ("CUUC", "CUUU", "UUUC", "UUUU")


@dataclass(frozen=True)
class CovarianceStructure:
    volume: str
    orientation: str
    shape: str
    dof: str

    @classmethod
    def parse(cls, code: "str | CovarianceStructure") -> "CovarianceStructure":
        if isinstance(code, CovarianceStructure):
            return code
        code = str(code).strip().upper()
        if code not in _TABLE:
            raise Unsupported(f"unknown structure code {code!r}")
        return cls(*code)

    @property
    def code(self) -> str:
        return self.volume + self.orientation + self.shape + self.dof

    @property
    def implemented(self) -> bool:
        return self.code in IMPLEMENTED

    @property
    def constrained_dof(self) -> bool:
        return self.dof == "C"

    def with_dof(self, dof: str) -> "CovarianceStructure":
        return CovarianceStructure.parse(self.code[:3] + dof)

    def __str__(self) -> str:
        return self.code


def free_param_count(structure, G: int, p: int) -> int:
    """Free scale plus degrees-of-freedom parameters of a structure."""
    s = CovarianceStructure.parse(structure)
    return int(_TABLE[s.code](G, p))


def total_param_count(structure, G: int, p: int, family: str = "t") -> int:
    """Parameters entering BIC: scale/dof count, G-1 mixing weights and G means.

    The Gaussian family has no degrees of freedom, so the dof term of the
    table expression is removed.
    """
    s = CovarianceStructure.parse(structure)
    k = free_param_count(s, G, p) + (G - 1) + G * p
    if family == "gaussian":
        k -= 1 if s.constrained_dof else G
    return k


def _check_masses(masses):
    for g, m in enumerate(masses):
        if not m > MASS_FLOOR:
            raise DegenerateComponent(g, float(m))


def _uicu(diag_scatter, masses, tol=1e-13, max_iter=1000):
    # Convex in (log lambda_g, log b_j); alternate the two closed-form updates.
    G, p = diag_scatter.shape
    b = diag_scatter.sum(axis=0)
    b = b / np.exp(np.mean(np.log(b)))
    lam = None
    for _ in range(max_iter):
        lam_new = (diag_scatter / b).sum(axis=1) / (p * masses)
        c = (diag_scatter / lam_new[:, None]).sum(axis=0)
        b_new = c / np.exp(np.mean(np.log(c)))
        done = lam is not None and (
            np.max(np.abs(lam_new - lam) / lam) < tol and np.max(np.abs(b_new - b) / b) < tol
        )
        lam, b = lam_new, b_new
        if done:
            break
    return lam[:, None] * b[None, :]


def project_structure(structure, scatters, masses) -> np.ndarray:
    """Scale matrices maximising the weighted complete-data objective.

    Parameters
    ----------
    structure : str or CovarianceStructure
    scatters : (G, p, p) array
        Weighted scatter matrices ``sum_j a_j z_jg w_jg (x_j - mu_g)(x_j - mu_g)'``.
    masses : (G,) array
        ``m_g = sum_j a_j z_jg``.

    Returns
    -------
    (G, p, p) array of scale matrices.  Quantities shared across components
    are computed once and broadcast, so equality constraints hold exactly.
    """
    s = CovarianceStructure.parse(structure)
    if not s.implemented:
        raise Unsupported(f"structure {s.code} has no implemented scale update")
    scatters = np.asarray(scatters, dtype=float)
    masses = np.asarray(masses, dtype=float)
    _check_masses(masses)
    G, p, _ = scatters.shape

    if s.orientation == "U":
        raw = scatters / masses[:, None, None]
        if s.volume == "U":
            return raw
        dets = np.array([max(np.linalg.det(W), 0.0) for W in scatters])
        roots = dets ** (1.0 / p)
        lam = roots.sum() / masses.sum()
        out = np.empty_like(scatters)
        for g in range(G):
            out[g] = lam * scatters[g] / roots[g] if roots[g] > 0 else raw[g]
        return out

    d = np.einsum("gii->gi", scatters)
    key = s.volume + s.shape
    if key == "CI":
        diag = np.full((G, p), d.sum() / (p * masses.sum()))
    elif key == "UI":
        diag = np.repeat((d.sum(axis=1) / (p * masses))[:, None], p, axis=1)
    elif key == "CC":
        diag = np.broadcast_to(d.sum(axis=0) / masses.sum(), (G, p))
    elif key == "UC":
        diag = _uicu(d, masses)
    elif key == "UU":
        diag = d / masses[:, None]
    else:  # CU
        gm = np.exp(np.mean(np.log(np.maximum(d, np.finfo(float).tiny)), axis=1))
        lam = gm.sum() / masses.sum()
        diag = lam * d / gm[:, None]
    out = np.zeros((G, p, p))
    idx = np.arange(p)
    out[:, idx, idx] = diag
    return out
