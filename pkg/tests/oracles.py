"""Independent reference implementations used by the tests.

Nothing here imports the package's numerics: kernels, posteriors and
expected improvement are written out from their textbook formulas with
dense solves, so agreement is a real cross-check.
"""

import itertools
import math

import numpy as np
from scipy.stats import norm


def matern(kind, sf2, ell, A, B):
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    r = np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2 / np.asarray(ell) ** 2).sum(-1))
    if kind == "matern52":
        s = math.sqrt(5.0) * r
        return sf2 * (1.0 + s + s * s / 3.0) * np.exp(-s)
    s = math.sqrt(3.0) * r
    return sf2 * (1.0 + s) * np.exp(-s)


def dense_posterior(kind, mean, sf2, ell, noise, X, y, Q):
    """Predictive mean and covariance by explicit inverse-free dense solves."""
    Q = np.atleast_2d(Q)
    if len(X) == 0:
        return np.full(len(Q), mean), matern(kind, sf2, ell, Q, Q)
    K = matern(kind, sf2, ell, X, X) + noise * np.eye(len(X))
    Ks = matern(kind, sf2, ell, Q, X)
    mu = mean + Ks @ np.linalg.solve(K, y - mean)
    cov = matern(kind, sf2, ell, Q, Q) - Ks @ np.linalg.solve(K, Ks.T)
    return mu, cov


def dense_nll(kind, mean, sf2, ell, noise, X, y):
    K = matern(kind, sf2, ell, X, X) + noise * np.eye(len(X))
    sign, logdet = np.linalg.slogdet(K)
    r = y - mean
    return 0.5 * r @ np.linalg.solve(K, r) + 0.5 * logdet + 0.5 * len(X) * math.log(2 * math.pi)


def expected_improvement(mu, sd, best):
    mu, sd = np.broadcast_arrays(np.atleast_1d(np.asarray(mu, float)), np.atleast_1d(np.asarray(sd, float)))
    out = np.maximum(mu - best, 0.0)
    pos = sd > 0
    with np.errstate(over="ignore"):
        z = (mu[pos] - best) / sd[pos]
    out[pos] = (mu[pos] - best) * norm.cdf(z) + sd[pos] * norm.pdf(z)
    return out


def two_step_ei(kind, mean, sf2, ell, noise, X, y, grid, best, nodes=1024, halfwidth=8.0):
    """Brute-force two-step EI on a finite grid.

    The expectation over the first outcome uses a Gauss-Legendre rule with
    ``nodes`` points on [-halfwidth, halfwidth] standard deviations; every
    branch re-solves the GP from scratch and maximizes EI over ``grid``.
    """
    zl, wl = np.polynomial.legendre.leggauss(nodes)
    z = halfwidth * zl
    w = halfwidth * wl * norm.pdf(z)
    mu, cov = dense_posterior(kind, mean, sf2, ell, noise, X, y, grid)
    var = np.maximum(np.diag(cov), 0.0)
    out = np.empty(len(grid))
    for i, x in enumerate(grid):
        sd = math.sqrt(var[i])
        value = expected_improvement(mu[i], sd, best)[0]
        if var[i] < 1e-10 * sf2:
            # known outcome: a single branch with unchanged data
            out[i] = value + expected_improvement(mu, np.sqrt(var), max(best, mu[i])).max()
            continue
        X2 = np.vstack([X, x])
        future = 0.0
        for zz, ww in zip(z, w):
            yy = mu[i] + sd * zz
            m2, c2 = dense_posterior(kind, mean, sf2, ell, noise, X2, np.append(y, yy), grid)
            future += ww * expected_improvement(m2, np.sqrt(np.maximum(np.diag(c2), 0.0)), max(best, yy)).max()
        out[i] = value + future
    return out


def wilcoxon_enumeration(a, b):
    """P(W+ >= observed) by listing all 2^n sign assignments of the midranks."""
    d = np.asarray(a, float) - np.asarray(b, float)
    d = d[d != 0]
    n = d.size
    absd = np.abs(d)
    ranks = np.array([
        np.sum(absd < v) + 0.5 * (np.sum(absd == v) + 1) for v in absd
    ])
    observed = ranks[d > 0].sum()
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        if ranks[np.array(signs, dtype=bool)].sum() >= observed - 1e-9:
            hits += 1
    return hits / 2.0**n
