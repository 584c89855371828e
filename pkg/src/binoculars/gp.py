"""Exact Gaussian-process regression with Matern ARD kernels.

Models are immutable: fitting hyperparameters, building a factorization and
conditioning on a fantasy observation all return new objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.linalg import cho_solve, solve_triangular

KERNELS = ("matern52", "matern32")

JITTER = 1e-8
JITTER_ESCALATIONS = 3

_LOG_2PI = math.log(2.0 * math.pi)


class NumericalError(ArithmeticError):
    """Raised when a covariance matrix cannot be factorized."""


@dataclass(frozen=True)
class BoxDomain:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size < 1:
            raise ValueError("lower and upper must be 1-d vectors of equal length")
        if not np.all(lower < upper):
            raise ValueError("every lower bound must be below its upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unit(cls, dim: int) -> "BoxDomain":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.width))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def clip(self, x) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def to_unit(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lower) / self.width

    def from_unit(self, u) -> np.ndarray:
        # clip so that round-off never leaves the box
        return self.clip(self.lower + np.asarray(u, dtype=float) * self.width)


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(values.size, -1) if values.size else points.reshape(0, -1)
        if points.ndim != 2 or points.shape[0] != values.size:
            raise ValueError("points must be an n x d matrix matching len(values)")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "values", values)

    @classmethod
    def empty(cls, dim: int) -> "Dataset":
        return cls(np.zeros((0, dim)), np.zeros(0))

    def __len__(self):
        return self.values.size

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def append(self, x, y) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return Dataset(np.vstack([self.points, x]), np.append(self.values, float(y)))


@dataclass(frozen=True)
class GPHyperparams:
    mean_const: float
    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "mean_const", float(self.mean_const))
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if not np.all(ls > 0):
            raise ValueError("lengthscales must be positive")
        if not self.noise_variance >= 0:
            raise ValueError("noise_variance must be non-negative")

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def to_vector(self) -> np.ndarray:
        """Pack as ``[mean, log sf2, log ell_1..ell_d, log noise]``."""
        return np.concatenate(
            [
                [self.mean_const, math.log(self.signal_variance)],
                np.log(self.lengthscales),
                [math.log(self.noise_variance) if self.noise_variance > 0 else -np.inf],
            ]
        )

    @classmethod
    def from_vector(cls, theta) -> "GPHyperparams":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[0], math.exp(theta[1]), np.exp(theta[2:-1]), math.exp(theta[-1]))


@dataclass(frozen=True)
class PredictiveGaussian:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def var(self) -> np.ndarray:
        return np.diag(self.cov).copy()


# --------------------------------------------------------------------------
# kernels


def _check_kind(kind):
    if kind not in KERNELS:
        raise ValueError(f"unknown kernel {kind!r}; expected one of {KERNELS}")


def _profile(kind, r):
    """Return k(r)/sf2 and c(r), where dk/dr = -sf2 * r * c(r)."""
    if kind == "matern52":
        s5r = math.sqrt(5.0) * r
        e = np.exp(-s5r)
        return (1.0 + s5r + s5r**2 / 3.0) * e, (5.0 / 3.0) * (1.0 + s5r) * e
    s3r = math.sqrt(3.0) * r
    e = np.exp(-s3r)
    return (1.0 + s3r) * e, 3.0 * e


def _scaled_sqdist(X1, X2, lengthscales):
    A = X1 / lengthscales
    B = X2 / lengthscales
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def kernel_eval(kind: str, hyper: GPHyperparams, x, x2) -> float:
    """Covariance between two single points."""
    _check_kind(kind)
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.size != x2.size or x.size != hyper.dim:
        raise ValueError("dimension mismatch between inputs and lengthscales")
    r = math.sqrt(float(np.sum(((x - x2) / hyper.lengthscales) ** 2)))
    k, _ = _profile(kind, r)
    return hyper.signal_variance * float(k)


def kernel_matrix(kind: str, hyper: GPHyperparams, X1, X2=None) -> np.ndarray:
    _check_kind(kind)
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = X1 if X2 is None else np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape[1] != hyper.dim or X2.shape[1] != hyper.dim:
        raise ValueError("dimension mismatch between inputs and lengthscales")
    r = np.sqrt(_scaled_sqdist(X1, X2, hyper.lengthscales))
    k, _ = _profile(kind, r)
    return hyper.signal_variance * k


def _kernel_input_vjp(kind, hyper, X1, X2, W):
    """Gradient of sum(W * k(X1, X2)) with respect to X1."""
    r = np.sqrt(_scaled_sqdist(X1, X2, hyper.lengthscales))
    _, c = _profile(kind, r)
    WC = W * c
    ell2 = hyper.lengthscales**2
    return -hyper.signal_variance * (WC.sum(1)[:, None] * X1 - WC @ X2) / ell2


def jittered_cholesky(A: np.ndarray, scale: float, escalations: int = JITTER_ESCALATIONS):
    """Cholesky factor of ``A``, adding ``1e-8 * scale`` (then x10, ...) on failure.

    Returns the factor and the jitter that was added (0.0 when none).
    """
    jitter = 0.0
    for attempt in range(escalations + 2):
        try:
            if jitter:
                L = np.linalg.cholesky(A + jitter * np.eye(A.shape[0]))
            else:
                L = np.linalg.cholesky(A)
            if np.all(np.isfinite(L)):
                return L, jitter
        except np.linalg.LinAlgError:
            pass
        jitter = JITTER * scale if attempt == 0 else jitter * 10.0
    raise NumericalError("covariance matrix is not positive definite after maximum jitter")


def _factor(K, hyper):
    if hyper.noise_variance == 0.0:
        # interpolation: duplicate inputs must fail, not be jittered away
        try:
            return np.linalg.cholesky(K)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("training covariance is singular") from exc
    return jittered_cholesky(K, hyper.signal_variance)[0]


# --------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class GPModel:
    kind: str
    hyper: GPHyperparams
    train: Dataset
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, kind: str, hyper: GPHyperparams, train: Dataset) -> "GPModel":
        """Factorize ``K(X, X) + noise * I`` for fixed hyperparameters."""
        _check_kind(kind)
        n = len(train)
        if n and train.dim != hyper.dim:
            raise ValueError("dimension mismatch between data and lengthscales")
        if n == 0:
            return cls(kind, hyper, train, np.zeros((0, 0)), np.zeros(0))
        K = kernel_matrix(kind, hyper, train.points)
        K[np.diag_indices(n)] += hyper.noise_variance
        L = _factor(K, hyper)
        alpha = cho_solve((L, True), train.values - hyper.mean_const)
        return cls(kind, hyper, train, L, alpha)

    @property
    def dim(self) -> int:
        return self.hyper.dim

    def __len__(self):
        return len(self.train)


def posterior(model: GPModel, Xq) -> PredictiveGaussian:
    """Joint predictive distribution of the latent function at ``Xq``."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    if Xq.shape[1] != model.dim:
        raise ValueError("query dimension does not match the model")
    prior = kernel_matrix(model.kind, model.hyper, Xq)
    mean = np.full(Xq.shape[0], model.hyper.mean_const)
    if len(model) == 0:
        return PredictiveGaussian(mean, prior)
    Ks = kernel_matrix(model.kind, model.hyper, Xq, model.train.points)
    V = solve_triangular(model.chol, Ks.T, lower=True)
    cov = prior - V.T @ V
    cov = 0.5 * (cov + cov.T)
    return PredictiveGaussian(mean + Ks @ model.alpha, cov)


def posterior_mean_var(model: GPModel, Xq):
    """Marginal predictive mean and variance; cheaper than :func:`posterior`."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    mean = np.full(Xq.shape[0], model.hyper.mean_const)
    var = np.full(Xq.shape[0], model.hyper.signal_variance)
    if len(model) == 0:
        return mean, var
    Ks = kernel_matrix(model.kind, model.hyper, Xq, model.train.points)
    V = solve_triangular(model.chol, Ks.T, lower=True)
    return mean + Ks @ model.alpha, np.maximum(var - (V * V).sum(0), 0.0)


def posterior_vjp(model: GPModel, Xq, g_mean, g_cov=None) -> np.ndarray:
    """Pull back gradients on the predictive mean/covariance to the query points.

    Returns d/dXq of ``g_mean . mean + sum(g_cov * cov)``.
    """
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    m = Xq.shape[0]
    g_mean = np.asarray(g_mean, dtype=float).reshape(m)
    grad = np.zeros_like(Xq)
    if g_cov is not None:
        G = np.asarray(g_cov, dtype=float).reshape(m, m)
        G = G + G.T
        grad += _kernel_input_vjp(model.kind, model.hyper, Xq, Xq, G)
    if len(model) == 0:
        return grad
    Xt = model.train.points
    W = np.outer(g_mean, model.alpha)
    if g_cov is not None:
        Ks = kernel_matrix(model.kind, model.hyper, Xq, Xt)
        V = solve_triangular(model.chol, Ks.T, lower=True)
        gV = -V @ G
        W += solve_triangular(model.chol, gV, lower=True, trans="T").T
    grad += _kernel_input_vjp(model.kind, model.hyper, Xq, Xt, W)
    return grad


def condition(model: GPModel, x, y: float) -> GPModel:
    """Add one observation without refitting hyperparameters.

    Extends the Cholesky factor by one row, so this costs O(n^2).
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    train = model.train.append(x, y)
    n = len(model)
    kxx = model.hyper.signal_variance + model.hyper.noise_variance
    if n == 0:
        if kxx <= 0:
            raise NumericalError("cannot condition on a degenerate point")
        L = np.array([[math.sqrt(kxx)]])
    else:
        kx = kernel_matrix(model.kind, model.hyper, model.train.points, x)[:, 0]
        l = solve_triangular(model.chol, kx, lower=True)
        schur = kxx - float(l @ l)
        if not schur > 1e-12 * model.hyper.signal_variance:
            raise NumericalError("conditioning point duplicates a noiseless training input")
        L = np.zeros((n + 1, n + 1))
        L[:n, :n] = model.chol
        L[n, :n] = l
        L[n, n] = math.sqrt(schur)
    alpha = cho_solve((L, True), train.values - model.hyper.mean_const)
    return GPModel(model.kind, model.hyper, train, L, alpha)


# --------------------------------------------------------------------------
# marginal likelihood


def nll_and_grad(data: Dataset, kind: str, hyper: GPHyperparams):
    """Negative log marginal likelihood and its gradient.

    The gradient is taken with respect to ``hyper.to_vector()``, i.e. the
    constant mean followed by the logs of the positive hyperparameters.
    """
    _check_kind(kind)
    X, y = data.points, data.values
    n, d = X.shape
    if n < 1:
        raise ValueError("need at least one observation")
    sf2 = hyper.signal_variance
    ell = hyper.lengthscales
    r = np.sqrt(_scaled_sqdist(X, X, ell))
    kr, c = _profile(kind, r)
    Kf = sf2 * kr
    A = Kf + hyper.noise_variance * np.eye(n)
    L = _factor(A, hyper)
    resid = y - hyper.mean_const
    alpha = cho_solve((L, True), resid)
    nll = 0.5 * resid @ alpha + np.log(np.diag(L)).sum() + 0.5 * n * _LOG_2PI

    Ainv = cho_solve((L, True), np.eye(n))
    W = Ainv - np.outer(alpha, alpha)
    grad = np.empty(d + 3)
    grad[0] = -alpha.sum()
    grad[1] = 0.5 * np.sum(W * Kf)
    WC = W * (sf2 * c)
    for a in range(d):
        diff = (X[:, a, None] - X[None, :, a]) / ell[a]
        grad[2 + a] = 0.5 * np.sum(WC * diff * diff)
    grad[-1] = 0.5 * hyper.noise_variance * np.trace(W)
    return float(nll), grad


@dataclass(frozen=True)
class HyperBounds:
    """Box over ``[mean, log sf2, log ell_1..d, log noise]``."""

    lower: np.ndarray
    upper: np.ndarray

    def as_list(self):
        return list(zip(self.lower, self.upper))


def default_bounds(data: Dataset, input_range=None) -> HyperBounds:
    """Search box used when fitting: lengthscales in [1e-3, 10] x input range,
    signal variance within e^{+-10} of the response variance, noise floor 1e-6."""
    y = data.values
    d = data.dim
    if input_range is None:
        input_range = np.ptp(data.points, axis=0) if len(data) else np.ones(d)
    input_range = np.broadcast_to(np.asarray(input_range, dtype=float), (d,)).copy()
    input_range[input_range <= 0] = 1.0
    v = float(np.var(y)) if len(y) > 1 else 0.0
    if not v > 0:
        v = 1.0
    lo_mean, hi_mean = float(y.min()), float(y.max())
    spread = max(hi_mean - lo_mean, math.sqrt(v))
    lower = np.concatenate(
        [[lo_mean - spread, math.log(v) - 10.0], np.log(1e-3 * input_range), [math.log(1e-6 * v)]]
    )
    upper = np.concatenate(
        [[hi_mean + spread, math.log(v) + 10.0], np.log(10.0 * input_range), [math.log(v)]]
    )
    return HyperBounds(lower, upper)


def _restart_points(data, bounds, restarts, rng):
    y = data.values
    v = math.exp(0.5 * (bounds.lower[1] + bounds.upper[1]))
    d = data.dim
    rng_ell = (bounds.lower[2 : 2 + d] + math.log(50.0), bounds.upper[2 : 2 + d] - math.log(5.0))
    points = []
    for _ in range(restarts):
        theta = np.empty(d + 3)
        theta[0] = y.mean() + y.std() * rng.uniform(-1.0, 1.0)
        theta[1] = math.log(v) + rng.uniform(-2.0, 2.0)
        theta[2 : 2 + d] = rng.uniform(rng_ell[0], rng_ell[1])
        theta[-1] = math.log(v) + rng.uniform(math.log(1e-6), math.log(1e-2))
        points.append(np.clip(theta, bounds.lower, bounds.upper))
    return points


def fit_hyperparams(
    data: Dataset,
    kind: str,
    bounds: Optional[HyperBounds] = None,
    restarts: int = 10,
    seed: int = 0,
    init: Optional[GPHyperparams] = None,
) -> GPHyperparams:
    """Maximize the marginal likelihood with multi-start L-BFGS-B.

    Restart 0 starts from ``init`` when given; the remaining restarts are
    drawn from a seeded generator. The lowest NLL wins, ties going to the
    earliest restart.
    """
    if len(data) < 2:
        raise ValueError("need at least two observations to fit hyperparameters")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if bounds is None:
        bounds = default_bounds(data)
    rng = np.random.default_rng(seed)
    starts = _restart_points(data, bounds, restarts, rng)
    if init is not None:
        theta0 = init.to_vector()
        theta0[-1] = max(theta0[-1], bounds.lower[-1])
        starts[0] = np.clip(theta0, bounds.lower, bounds.upper)

    def objective(theta):
        try:
            f, g = nll_and_grad(data, kind, GPHyperparams.from_vector(theta))
        except (NumericalError, ValueError, FloatingPointError):
            return 1e25, np.zeros_like(theta)
        if not np.isfinite(f):
            return 1e25, np.zeros_like(theta)
        return f, g

    best_theta, best_f = None, np.inf
    for theta0 in starts:
        f0, _ = objective(theta0)
        res = optimize.minimize(
            objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds.as_list(),
            options={"maxiter": 200},
        )
        theta, f = np.clip(res.x, bounds.lower, bounds.upper), float(res.fun)
        if not f <= f0:
            theta, f = theta0, f0
        if f < best_f:
            best_theta, best_f = theta, f
    if best_theta is None or best_f >= 1e25:
        raise NumericalError("every restart failed to factorize the covariance")
    return GPHyperparams.from_vector(best_theta)
