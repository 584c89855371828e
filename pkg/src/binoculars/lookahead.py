"""Nonmyopic baselines: multi-step EI rollout and penalized-batch lookahead.

Rollout evaluates the k-step expected improvement recursion

    EI_k(x) = EI_1(x) + E_y[ max_x' EI_{k-1}(x' | D + (x, y)) ]

with Gauss-Hermite quadrature over ``y`` and the incumbent replaced by
``max(y0, y)`` in each branch. Hyperparameters stay frozen in fantasies.

The penalized-batch policy scores ``x`` by the batch EI of ``x`` plus
``q - 1`` points chosen greedily by EI multiplied by local exclusion
penalties around the points already in the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .acq_bo import draw_base_samples, ei_analytic, ei_many, qei_mc
from .gp import BoxDomain, GPModel, condition, posterior_mean_var, posterior_vjp
from .optim import ObjectiveHandle, direct_maximize, gauss_hermite, seeded_uniform, split_seed

# below this fraction of the signal variance an outcome is treated as known
_DETERMINISTIC_VAR = 1e-10


@dataclass(frozen=True)
class RolloutSpec:
    horizon: int
    gh_nodes: int = 10
    inner_budget: int = 100
    outer_budget: int = 500

    def __post_init__(self):
        if self.horizon < 1 or self.gh_nodes < 1:
            raise ValueError("rollout needs horizon >= 1 and at least one quadrature node")


def _best_future(model, incumbent, k, spec, domain, candidates):
    """max_x' EI_k(x' | model), exhaustively over candidates or by DIRECT."""
    if k == 1:
        if candidates is not None:
            return float(np.max(ei_many(model, candidates, incumbent)))
        handle = ObjectiveHandle(
            domain.dim,
            lambda x: float(ei_many(model, x[None, :], incumbent)[0]),
            evaluate_many=lambda X: ei_many(model, X, incumbent),
        )
        return direct_maximize(handle, domain, spec.inner_budget)[1]

    def value(x):
        return _rollout_value(model, x, incumbent, k, spec, domain, candidates)

    if candidates is not None:
        return max(value(c) for c in candidates)
    return direct_maximize(ObjectiveHandle(domain.dim, value), domain, spec.inner_budget)[1]


def _rollout_value(model, x, incumbent, k, spec, domain, candidates):
    x = np.asarray(x, dtype=float).ravel()
    mu, var = posterior_mean_var(model, x[None, :])
    mu, var = float(mu[0]), float(var[0])
    sd = math.sqrt(var)
    value = float(ei_analytic(mu, sd, incumbent))
    if k == 1:
        return value
    if var <= _DETERMINISTIC_VAR * model.hyper.signal_variance:
        branches = [(mu, 1.0, model)]
    else:
        rule = gauss_hermite(spec.gh_nodes)
        branches = [
            (mu + sd * z, w, condition(model, x, mu + sd * z)) for z, w in zip(rule.nodes, rule.weights)
        ]
    for y, w, fantasy in branches:
        value += w * _best_future(fantasy, max(incumbent, y), k - 1, spec, domain, candidates)
    return value


def rollout_acq(
    model: GPModel,
    x,
    incumbent: float,
    spec: RolloutSpec,
    domain: BoxDomain,
    candidates: Optional[np.ndarray] = None,
) -> float:
    """k-step lookahead EI at ``x``.

    ``candidates`` restricts every inner maximization to a finite set, which
    turns the inner DIRECT search into exhaustive enumeration.
    """
    if candidates is not None:
        candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    return _rollout_value(model, x, incumbent, spec.horizon, spec, domain, candidates)


def rollout_select(model: GPModel, incumbent: float, spec: RolloutSpec, domain: BoxDomain) -> np.ndarray:
    handle = ObjectiveHandle(domain.dim, lambda x: rollout_acq(model, x, incumbent, spec, domain))
    return direct_maximize(handle, domain, spec.outer_budget)[0]


# --------------------------------------------------------------------------
# penalized batch lookahead


@dataclass(frozen=True)
class GlassesSpec:
    batch_size: int
    qmc_samples: int = 512
    lipschitz_points: int = 500
    inner_budget: int = 100
    outer_budget: int = 500

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class PenaltyContext:
    """Per-iteration constants of the local penalizer."""

    lipschitz: float
    mean_max: float
    fallback_radius: float


def penalty_context(model: GPModel, domain: BoxDomain, n_points: int = 500, seed: int = 0) -> PenaltyContext:
    """Estimate the Lipschitz constant of the posterior mean and its maximum."""
    X = seeded_uniform(domain, n_points, seed)
    grads = posterior_vjp(model, X, np.ones(n_points))
    lipschitz = float(np.max(np.linalg.norm(grads, axis=1))) if n_points else 0.0
    pts = X if len(model) == 0 else np.vstack([X, model.train.points])
    mean, _ = posterior_mean_var(model, pts)
    return PenaltyContext(lipschitz, float(mean.max()), 0.05 * domain.diameter)


def penalizer(X, center, radius):
    """0 inside the ball, 1 beyond 1.1 * radius, smoothstep in between."""
    if radius <= 0:
        return np.ones(len(X))
    dist = np.linalg.norm(np.atleast_2d(X) - center, axis=1)
    t = np.clip((dist - radius) / (0.1 * radius), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _radii(model, batch, context):
    if context.lipschitz <= 0:
        return np.full(len(batch), context.fallback_radius)
    mean, _ = posterior_mean_var(model, batch)
    return np.maximum(context.mean_max - mean, 0.0) / context.lipschitz


def glasses_batch(
    model: GPModel,
    x,
    incumbent: float,
    spec: GlassesSpec,
    domain: BoxDomain,
    context: Optional[PenaltyContext] = None,
) -> np.ndarray:
    """Batch of ``spec.batch_size`` points whose first row is ``x``."""
    if context is None:
        context = penalty_context(model, domain, spec.lipschitz_points)
    batch = np.asarray(x, dtype=float).reshape(1, -1)
    while len(batch) < spec.batch_size:
        radii = _radii(model, batch, context)

        def penalized(X, batch=batch, radii=radii):
            X = np.atleast_2d(X)
            value = ei_many(model, X, incumbent)
            for center, r in zip(batch, radii):
                value = value * penalizer(X, center, r)
            return value

        handle = ObjectiveHandle(domain.dim, lambda z: float(penalized(z)[0]), evaluate_many=penalized)
        nxt, _ = direct_maximize(handle, domain, spec.inner_budget)
        batch = np.vstack([batch, nxt])
    return batch


def glasses_acq(
    model: GPModel,
    x,
    incumbent: float,
    spec: GlassesSpec,
    domain: BoxDomain,
    seed: int = 0,
    context: Optional[PenaltyContext] = None,
) -> float:
    """Quasi-Monte-Carlo batch EI of ``x`` together with its penalized batch."""
    batch = glasses_batch(model, x, incumbent, spec, domain, context)
    base = draw_base_samples(spec.qmc_samples, len(batch), seed, quasi=True)
    return qei_mc(model, batch, incumbent, base)


def glasses_select(model: GPModel, incumbent: float, spec: GlassesSpec, domain: BoxDomain, seed: int = 0):
    context = penalty_context(model, domain, spec.lipschitz_points, split_seed(seed, 0))
    qmc_seed = split_seed(seed, 1)
    handle = ObjectiveHandle(
        domain.dim, lambda x: glasses_acq(model, x, incumbent, spec, domain, qmc_seed, context)
    )
    return direct_maximize(handle, domain, spec.outer_budget)[0]
