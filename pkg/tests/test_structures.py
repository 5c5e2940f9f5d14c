import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from fsc.errors import DegenerateComponent, Unsupported
from fsc.numerics import factorize_spd
from fsc.structures import (
    ALL_CODES,
    IMPLEMENTED,
    CovarianceStructure,
    free_param_count,
    project_structure,
    total_param_count,
)

# Table rows transcribed as plain strings and evaluated separately from the package table.
TABLE_ROWS = {
    "CIIC": "1+1", "CIIU": "1+G", "UIIC": "(G-1)+1", "UIIU": "(G-1)+G",
    "CICC": "p+1", "CICU": "p+G", "UICC": "p+(G-1)+1", "UICU": "p+(G-1)+G",
    "CIUC": "G*p-(G-1)+1", "CIUU": "G*p-(G-1)+G", "UIUC": "G*p+1", "UIUU": "G*p+G",
    "CCCC": "(p*(p+1)//2)+1", "CCCU": "(p*(p+1)//2)+G",
    "UCCC": "(p*(p+1)//2)+(G-1)+1", "UCCU": "(p*(p+1)//2)+(G-1)+G",
    "CUCC": "G*(p*(p+1)//2)-(G-1)*p+1", "CUCU": "G*(p*(p+1)//2)-(G-1)*p+G",
    "UUCC": "G*(p*(p+1)//2)-(G-1)*(p-1)+1", "UUCU": "G*(p*(p+1)//2)-(G-1)*(p-1)+G",
    "CCUC": "(p*(p+1)//2)+(G-1)*(p-1)+1", "CCUU": "(p*(p+1)//2)+(G-1)*(p-1)+G",
    "CUUC": "G*(p*(p+1)//2)-(G-1)+1", "CUUU": "G*(p*(p+1)//2)-(G-1)+G",
    "UCUC": "G*(p*(p+1)//2)+(G-1)*p+1", "UCUU": "G*(p*(p+1)//2)+(G-1)*p+G",
    "UUUC": "G*(p*(p+1)//2)+1", "UUUU": "G*(p*(p+1)//2)+G",
}


# rows whose tabulated count departs from the decomposition count
VERBATIM_ONLY = ("UCU", "UII")


def derived_count(code, G, p):
    """Count from the eigen-decomposition: volume, orientation, shape, dof pieces."""
    vol, ori, shp, dof = code
    n = 1 if vol == "C" else G
    rot = p * (p - 1) // 2
    n += {"I": 0, "C": rot, "U": G * rot}[ori]
    n += {"I": 0, "C": p - 1, "U": G * (p - 1)}[shp]
    return n + (1 if dof == "C" else G)


def q_objective(sigmas, scatters, masses):
    """Weighted complete-data objective in the scale matrices (up to constants)."""
    total = 0.0
    for S, W, m in zip(sigmas, scatters, masses):
        total -= m * np.linalg.slogdet(S)[1] + np.trace(np.linalg.solve(S, W))
    return total / 2


def random_scatters(rng, G, p, diag=False):
    out = []
    for _ in range(G):
        a = rng.normal(size=(p + 3, p)) * rng.uniform(0.5, 3, size=p)
        W = a.T @ a
        out.append(np.diag(np.diag(W)) if diag else W)
    return np.array(out), rng.uniform(2, 20, size=G)


def identity_family_optimum(code, scatters, masses):
    """Numerical optimum over diagonal matrices obeying the volume/shape constraints."""
    G, p, _ = scatters.shape
    vol, _, shp, _ = code
    nv = 1 if vol == "C" else G
    ns = {"I": 0, "C": p - 1, "U": G * (p - 1)}[shp]

    def build(theta):
        lam = np.exp(theta[:nv]) * np.ones(G)
        if shp == "I":
            b = np.zeros((G, p))
        else:
            free = theta[nv:].reshape(-1, p - 1)
            free = np.broadcast_to(free, (G, p - 1)) if shp == "C" else free
            b = np.hstack([free, -free.sum(axis=1, keepdims=True)])
        return [np.diag(lam[g] * np.exp(b[g])) for g in range(G)]

    res = minimize(lambda t: -q_objective(build(t), scatters, masses), np.zeros(nv + ns),
                   method="BFGS", options={"gtol": 1e-10})
    return -res.fun


class TestCounts:
    def test_28_codes(self):
        assert len(ALL_CODES) == 28
        assert set(ALL_CODES) == set(TABLE_ROWS)

    @pytest.mark.parametrize("code", sorted(TABLE_ROWS))
    @pytest.mark.parametrize("G,p", [(1, 1), (2, 3), (3, 4), (5, 2)])
    def test_matches_transcribed_table(self, code, G, p):
        assert free_param_count(code, G, p) == eval(TABLE_ROWS[code], {"G": G, "p": p})

    @pytest.mark.parametrize("code", [c for c in ALL_CODES if c[:3] not in VERBATIM_ONLY])
    @pytest.mark.parametrize("G,p", [(2, 3), (3, 4), (4, 5)])
    def test_agrees_with_decomposition(self, code, G, p):
        assert free_param_count(code, G, p) == derived_count(code, G, p)

    @pytest.mark.parametrize("code", ["UCUC", "UCUU", "UIIC", "UIIU"])
    def test_discrepant_rows_kept_verbatim(self, code):
        assert free_param_count(code, 3, 4) == eval(TABLE_ROWS[code], {"G": 3, "p": 4})
        assert free_param_count(code, 3, 4) != derived_count(code, 3, 4)

    def test_examples(self):
        assert free_param_count("UUUU", 3, 2) == 3 * 3 + 3
        assert free_param_count("CIIC", 7, 9) == 2
        assert free_param_count("CCUU", 3, 4) == 19

    @pytest.mark.parametrize("code,G,p,family,expected", [
        ("UUUU", 2, 2, "t", 6 + 2 + 1 + 4),
        ("UUUU", 2, 2, "gaussian", 6 + 1 + 4),
        ("CIIC", 3, 4, "t", 2 + 2 + 12),
        ("CIIC", 3, 4, "gaussian", 1 + 2 + 12),
        ("UIUU", 3, 2, "t", 9 + 2 + 6),
    ])
    def test_totals(self, code, G, p, family, expected):
        assert total_param_count(code, G, p, family) == expected

    def test_unknown_code(self):
        with pytest.raises(Unsupported):
            free_param_count("XXXX", 2, 2)
        with pytest.raises(Unsupported):
            CovarianceStructure.parse("CII")

    def test_implemented_set(self):
        assert len(IMPLEMENTED) == 16
        assert CovarianceStructure.parse("UICC").orientation == "I"
        assert not CovarianceStructure.parse("CCCC").implemented


class TestProjection:
    def test_uuuu_is_raw(self):
        rng = np.random.default_rng(0)
        W, m = random_scatters(rng, 3, 3)
        assert np.array_equal(project_structure("UUUU", W, m), W / m[:, None, None])

    def test_ciic_pooled_variance(self):
        W = np.array([np.eye(2) * 1.0, np.eye(2) * 3.0]) * 10
        out = project_structure("CIIC", W, np.array([10.0, 10.0]))
        assert np.allclose(out, 2 * np.eye(2))

    def test_uiiu_trace(self):
        out = project_structure("UIIU", np.diag([4.0, 1.0])[None] * 5, np.array([5.0]))
        assert np.allclose(out[0], 2.5 * np.eye(2))

    def test_unimplemented(self):
        with pytest.raises(Unsupported):
            project_structure("CCCC", np.eye(2)[None], np.ones(1))

    def test_zero_mass(self):
        with pytest.raises(DegenerateComponent):
            project_structure("UUUU", np.array([np.eye(2)] * 2), np.array([1.0, 0.0]))

    @pytest.mark.parametrize("code", [c for c in IMPLEMENTED if c[1] == "I"])
    def test_identity_family_is_optimal(self, code):
        rng = np.random.default_rng(zlib.crc32(code.encode()))
        W, m = random_scatters(rng, 3, 3)
        ours = project_structure(code, W, m)
        best = identity_family_optimum(code, W, m)
        assert q_objective(ours, W, m) >= best - 1e-7 * abs(best)

    @pytest.mark.parametrize("code", ["CUUC", "UUUC", "CUUU", "UUUU"])
    def test_unconstrained_orientation_beats_perturbations(self, code):
        rng = np.random.default_rng(7)
        W, m = random_scatters(rng, 3, 3)
        ours = project_structure(code, W, m)
        q0 = q_objective(ours, W, m)
        for _ in range(50):
            alt = []
            for S in ours:
                E = rng.normal(scale=0.05, size=(3, 3))
                Q = np.eye(3) + E + E.T
                C = Q @ S @ Q.T
                if code[0] == "C":
                    C *= (np.linalg.det(ours[0]) / np.linalg.det(C)) ** (1 / 3)
                alt.append(C)
            assert q_objective(alt, W, m) <= q0 + 1e-9

    @given(st.sampled_from(IMPLEMENTED), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10**6))
    def test_constraints_hold(self, code, G, p, seed):
        rng = np.random.default_rng(seed)
        W, m = random_scatters(rng, G, p)
        out = project_structure(code, W, m)
        s = CovarianceStructure.parse(code)
        for S in out:
            factorize_spd(S)
        if s.orientation == "I":
            assert np.all(out[:, ~np.eye(p, dtype=bool)] == 0)
        d = np.einsum("gii->gi", out)
        vols = np.exp(np.mean(np.log(d), axis=1)) if s.orientation == "I" else \
            np.array([np.linalg.det(S) ** (1 / p) for S in out])
        if s.volume == "C":
            assert np.allclose(vols, vols[0], rtol=1e-10)
        if s.shape == "I":
            assert np.allclose(d, d[:, :1], rtol=1e-12)
        if s.shape == "C" and s.orientation == "I":
            shapes = d / vols[:, None]
            assert np.allclose(shapes, shapes[0], rtol=1e-8)

    @given(st.sampled_from(IMPLEMENTED), st.integers(0, 10**6))
    def test_idempotent(self, code, seed):
        rng = np.random.default_rng(seed)
        W, m = random_scatters(rng, 3, 3)
        once = project_structure(code, W, m)
        twice = project_structure(code, once * m[:, None, None], m)
        assert np.allclose(twice, once, rtol=1e-10, atol=1e-12)
