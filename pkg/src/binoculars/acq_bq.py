"""Bayesian quadrature with a GP on the log of a positive integrand.

The integrand posterior is approximated by moment matching the log-normal:
with log-GP mean ``m``, variance ``s`` and covariance ``k``,

    mean_f(x)      = exp(m(x) + s(x)/2)
    cov_f(x, x')   = exp(m(x) + m(x') + (s(x) + s(x'))/2) * (exp(k(x, x')) - 1)

Batch selection maximizes the Gaussian entropy of ``cov_f`` at the batch,
i.e. the mode of a determinantal point process with that kernel.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.stats import norm, qmc

from .gp import (
    BoxDomain,
    GPModel,
    NumericalError,
    jittered_cholesky,
    posterior,
    posterior_mean_var,
    posterior_vjp,
)
from .optim import RAW_SAMPLES, ObjectiveHandle, multistart_maximize, split_seed

_LOG_2PIE = math.log(2.0 * math.pi * math.e)
_DPP_JITTER = 1e-10
_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class IntegrationPrior:
    """Either a uniform density on a box or a diagonal Gaussian."""

    kind: str
    lower: np.ndarray = None
    upper: np.ndarray = None
    mean: np.ndarray = None
    variance: np.ndarray = None

    @classmethod
    def uniform(cls, domain: BoxDomain) -> "IntegrationPrior":
        return cls("uniform", lower=domain.lower.copy(), upper=domain.upper.copy())

    @classmethod
    def gaussian(cls, mean, variance) -> "IntegrationPrior":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        variance = np.atleast_1d(np.asarray(variance, dtype=float))
        if mean.shape != variance.shape or np.any(variance <= 0):
            raise ValueError("gaussian prior needs matching means and positive variances")
        return cls("gaussian", mean=mean, variance=variance)

    @property
    def dim(self) -> int:
        return (self.lower if self.kind == "uniform" else self.mean).size

    def support(self) -> BoxDomain:
        """Box used for optimization; Gaussians are truncated at 6 sd."""
        if self.kind == "uniform":
            return BoxDomain(self.lower, self.upper)
        sd = np.sqrt(self.variance)
        return BoxDomain(self.mean - 6.0 * sd, self.mean + 6.0 * sd)

    def to_unit(self, domain: BoxDomain) -> "IntegrationPrior":
        """The same prior expressed in the unit-cube coordinates of ``domain``."""
        if self.kind == "uniform":
            return IntegrationPrior(
                "uniform", lower=domain.to_unit(self.lower), upper=domain.to_unit(self.upper)
            )
        return IntegrationPrior(
            "gaussian", mean=domain.to_unit(self.mean), variance=self.variance / domain.width**2
        )

    def nodes(self, n: int, seed: int) -> np.ndarray:
        """Scrambled Sobol points pushed through the prior."""
        sobol = qmc.Sobol(self.dim, scramble=True, seed=np.random.default_rng(seed))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            u = sobol.random(n)
        if self.kind == "uniform":
            return self.lower + u * (self.upper - self.lower)
        u = np.clip(u, 1e-12, 1.0 - 1e-12)
        return self.mean + np.sqrt(self.variance) * norm.ppf(u)


@dataclass(frozen=True)
class WarpedPosterior:
    """A GP fitted to ``(log f - offset) / scale``."""

    log_model: GPModel
    offset: float = 0.0
    scale: float = 1.0

    def log_moments(self, X):
        """Posterior mean and covariance of ``log f`` in its original units."""
        post = posterior(self.log_model, X)
        return self.offset + self.scale * post.mean, self.scale**2 * post.cov

    def log_marginals(self, X):
        """Pointwise mean and variance of ``log f``; linear in the number of points."""
        mean, var = posterior_mean_var(self.log_model, X)
        return self.offset + self.scale * mean, self.scale**2 * var


@dataclass(frozen=True)
class IntegralEstimate:
    z_mean: float
    z_var: float


def _as_warped(wp: Union[WarpedPosterior, GPModel]) -> WarpedPosterior:
    return wp if isinstance(wp, WarpedPosterior) else WarpedPosterior(wp)


def _half_log_scale(m, var):
    a = m + 0.5 * var
    if np.any(a > _EXP_LIMIT):
        raise NumericalError(
            f"warped mean overflows: log-mean + var/2 reaches {a.max():.1f} (> {_EXP_LIMIT})"
        )
    return a


def warp_posterior(wp, Xq):
    """Moment-matched mean vector and covariance matrix of ``f`` at ``Xq``."""
    wp = _as_warped(wp)
    m, k = wp.log_moments(np.atleast_2d(Xq))
    a = _half_log_scale(m, np.diag(k))
    scale = np.exp(a)
    cov = np.outer(scale, scale) * np.expm1(k)
    return scale, 0.5 * (cov + cov.T)


def integral_estimate(wp, prior: IntegrationPrior, n_nodes: int = 2048, seed: int = 0) -> IntegralEstimate:
    """Quasi-Monte-Carlo estimate of the mean and variance of ``Z = int f pi``."""
    if n_nodes < 16:
        raise ValueError("n_nodes must be >= 16")
    wp = _as_warped(wp)
    U = prior.nodes(n_nodes, seed)
    m, k = wp.log_moments(U)
    a = _half_log_scale(m, np.diag(k))
    w = np.exp(a) / n_nodes
    z_mean = float(w.sum())
    # a log-variance past the float range means the integral variance is inf
    with np.errstate(over="ignore", invalid="ignore"):
        z_var = float(w @ np.expm1(k) @ w)
    if np.isnan(z_var):
        z_var = math.inf
    return IntegralEstimate(z_mean, max(z_var, 0.0))


def _warped_variances(wp, X):
    m, v = _as_warped(wp).log_marginals(np.atleast_2d(np.asarray(X, dtype=float)))
    a = _half_log_scale(m, v)
    return np.maximum(np.exp(2.0 * a) * np.expm1(v), 0.0)


def unct_score(wp, x) -> float:
    """Variance of the warped integrand at ``x``."""
    return float(_warped_variances(wp, np.asarray(x, dtype=float).reshape(1, -1))[0])


def immediate_scores_bq(wp, batch) -> np.ndarray:
    """Marginal warped variances of the batch members."""
    return _warped_variances(wp, batch)


def gaussian_entropy(cov) -> float:
    """Differential entropy 0.5 * log det(2 pi e cov)."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise NumericalError("covariance is not positive definite")
    return 0.5 * (cov.shape[0] * _LOG_2PIE + logdet)


def _dpp(wp: WarpedPosterior, X, with_grad):
    # cov_f = D M D with D = diag(exp(a)), M = expm1(k); log det splits accordingly
    m, k = wp.log_moments(X)
    a = _half_log_scale(m, np.diag(k))
    q = X.shape[0]
    if np.max(np.diag(k)) > _EXP_LIMIT:
        raise NumericalError("warped batch variance overflows")
    E = np.exp(k)
    M = E - 1.0
    # M is dimensionless, so the jitter never drops below an absolute floor;
    # otherwise a batch sitting on noiseless data has an unbounded inverse
    mean_diag = float(np.mean(np.diag(M)))
    scale = max(mean_diag, 1.0)
    eps = _DPP_JITTER * scale
    try:
        L, _ = jittered_cholesky(M + eps * np.eye(q), scale)
    except NumericalError as exc:
        raise NumericalError("warped batch covariance is not positive definite") from exc
    logdet = 2.0 * np.log(np.diag(L)).sum()
    value = 0.5 * q * _LOG_2PIE + a.sum() + 0.5 * logdet
    if not with_grad:
        return float(value)
    Minv = np.linalg.solve(L.T, np.linalg.solve(L, np.eye(q)))
    g_k = 0.5 * Minv * E
    g_k[np.diag_indices(q)] += 0.5
    if mean_diag > 1.0:
        g_k[np.diag_indices(q)] += 0.5 * np.trace(Minv) * _DPP_JITTER / q * np.diag(E)
    g_m = np.ones(q)
    grad = posterior_vjp(wp.log_model, X, wp.scale * g_m, wp.scale**2 * g_k)
    return float(value), grad


def dpp_entropy(wp, batch) -> float:
    """Entropy of the warped integrand values at a (q, d) batch."""
    return _dpp(_as_warped(wp), np.atleast_2d(np.asarray(batch, dtype=float)), with_grad=False)


def dpp_entropy_and_grad(wp, batch):
    return _dpp(_as_warped(wp), np.atleast_2d(np.asarray(batch, dtype=float)), with_grad=True)


def optimize_dpp(wp, q: int, domain: BoxDomain, n_starts: int = 20, seed: int = 0) -> np.ndarray:
    """Multi-start maximization of :func:`dpp_entropy`; returns a (q, d) batch.

    With ``q = 1`` this is uncertainty sampling.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    wp = _as_warped(wp)
    d = domain.dim
    flat = BoxDomain(np.tile(domain.lower, q), np.tile(domain.upper, q))

    def fn(x):
        value, grad = _dpp(wp, x.reshape(q, d), with_grad=True)
        return value, grad.ravel()

    def many(X):
        out = np.empty(len(X))
        for i, x in enumerate(X):
            try:
                out[i] = _dpp(wp, x.reshape(q, d), with_grad=False)
            except NumericalError:
                out[i] = -np.inf
        return out

    handle = ObjectiveHandle.from_value_and_grad(q * d, fn, many)
    x, _ = multistart_maximize(handle, flat, n_starts, split_seed(seed, 1), RAW_SAMPLES)
    return x.reshape(q, d)
