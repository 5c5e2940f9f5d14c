"""Independent reference implementations used as test oracles.

Everything here is written from first principles with loops and scipy's
distribution objects, sharing no code with the package.
"""
from fractions import Fraction
from itertools import combinations

import numpy as np
from scipy.stats import multivariate_normal


def ari_brute_force(a, b) -> float:
    """Adjusted Rand index by enumerating every pair of points."""
    n = len(a)
    both = in_a = in_b = 0
    for i, j in combinations(range(n), 2):
        sa, sb = a[i] == a[j], b[i] == b[j]
        both += sa and sb
        in_a += sa
        in_b += sb
    total = n * (n - 1) // 2
    expected = Fraction(in_a * in_b, total) if total else Fraction(0)
    maximum = Fraction(in_a + in_b, 2)
    if maximum == expected:
        return 1.0
    return float((both - expected) / (maximum - expected))


def scatter_naive(x, labels):
    x = np.asarray(x, float)
    p = x.shape[1]
    grand = sum(x) / len(x)
    S = sum(np.outer(r - grand, r - grand) for r in x)
    W = np.zeros((p, p))
    B = np.zeros((p, p))
    for g in set(labels.tolist()):
        rows = [x[i] for i in range(len(x)) if labels[i] == g]
        m = sum(rows) / len(rows)
        W += sum(np.outer(r - m, r - m) for r in rows)
        B += len(rows) * np.outer(m - grand, m - grand)
    return S, W, B


def class_mle(x, labels, G):
    """Per-class proportions, means and divide-by-n covariances."""
    x = np.asarray(x, float)
    n = len(x)
    pis, mus, sigmas = [], [], []
    for g in range(G):
        xg = x[labels == g]
        m = xg.mean(axis=0)
        d = xg - m
        pis.append(len(xg) / n)
        mus.append(m)
        sigmas.append(d.T @ d / len(xg))
    return np.array(pis), np.array(mus), np.array(sigmas)


def semi_supervised_em(lx, lz, ux, z_unl, n_iter):
    """Classical unweighted semi-supervised Gaussian EM (unconstrained covariances).

    Starts with an M-step from the given unlabelled responsibilities and
    runs ``n_iter`` further E/M rounds.
    """
    X = np.vstack([lx, ux])
    G = lz.shape[1]

    def m_step(z):
        pis, mus, sigmas = [], [], []
        for g in range(G):
            w = z[:, g]
            s = w.sum()
            mu = (w[:, None] * X).sum(axis=0) / s
            d = X - mu
            sigmas.append((w[:, None] * d).T @ d / s)
            mus.append(mu)
            pis.append(s / len(X))
        return np.array(pis), np.array(mus), np.array(sigmas)

    def e_step(pis, mus, sigmas):
        dens = np.column_stack([
            pis[g] * multivariate_normal(mus[g], sigmas[g]).pdf(ux).reshape(-1) for g in range(G)
        ])
        return dens / dens.sum(axis=1, keepdims=True)

    params = m_step(np.vstack([lz, z_unl]))
    for _ in range(n_iter):
        z_unl = e_step(*params)
        params = m_step(np.vstack([lz, z_unl]))
    return params


def random_instance(rng, n_max=60, p_max=3, G_max=3, lab_frac=0.5, sep=4.0):
    """Small well-separated Gaussian instance; every class has labelled rows.

    Returns ``(x, labels, truth, G)`` with ``labels = -1`` for unlabelled rows.
    """
    G = int(rng.integers(2, G_max + 1))
    p = int(rng.integers(1, p_max + 1))
    per = int(rng.integers(max(8, 2 * (p + 1)), n_max // G + 1))
    centres = rng.normal(scale=sep, size=(G, p))
    x = np.vstack([rng.normal(size=(per, p)) + c for c in centres])
    truth = np.repeat(np.arange(G), per)
    labels = truth.copy()
    k = max(1, int(round(lab_frac * per)))
    for g in range(G):
        rows = np.flatnonzero(truth == g)
        labels[rows[k:]] = -1
    idx = rng.permutation(len(x))
    return x[idx], labels[idx], truth[idx], G
