"""Box-constrained maximizers, Gauss-Hermite rules and seeded sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import optimize

from .gp import BoxDomain

_MASK64 = (1 << 64) - 1


def split_seed(base_seed: int, index: int) -> int:
    """Derive an independent 64-bit seed for stream ``index``.

    This is the splitmix64 output for step ``index + 1`` from state
    ``base_seed``: increment by the golden-ratio constant 0x9E3779B97F4A7C15,
    then two xor-shift-multiply rounds with 0xBF58476D1CE4E5B9 and
    0x94D049BB133111EB. Streams do not depend on the order they are requested.
    """
    z = (int(base_seed) + (int(index) + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def seeded_uniform(domain: BoxDomain, count: int, seed: int) -> np.ndarray:
    """``count`` i.i.d. uniform points in the box; rows are a prefix-stable stream."""
    if count < 0:
        raise ValueError("count must be non-negative")
    rng = np.random.default_rng(seed)
    u = rng.random((count, domain.dim))
    return domain.clip(domain.lower + u * domain.width)


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray


def gauss_hermite(n: int) -> QuadratureRule:
    """Gauss-Hermite rule normalized against the standard normal density.

    ``sum(w * g(z))`` approximates ``E[g(Z)]`` for ``Z ~ N(0, 1)`` and is exact
    for polynomials of degree up to ``2n - 1``.
    """
    if not 1 <= n <= 64:
        raise ValueError("Gauss-Hermite order must be between 1 and 64")
    z, w = hermegauss(n)
    z = 0.5 * (z - z[::-1])
    w = 0.5 * (w + w[::-1])
    return QuadratureRule(z, w / w.sum())


@dataclass
class ObjectiveHandle:
    """A deterministic scalar function on R^d to be maximized.

    ``evaluate_many`` is optional; :func:`direct_maximize` and start
    screening use it to score several points per call.
    """

    dimension: int
    evaluate: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    evaluate_many: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @classmethod
    def from_value_and_grad(cls, dimension, fn, evaluate_many=None):
        """Wrap ``fn(x) -> (value, grad)``, caching the last call."""
        cache = {}

        def _call(x):
            key = np.asarray(x, dtype=float).tobytes()
            if cache.get("key") != key:
                cache["key"] = key
                cache["out"] = fn(np.array(x, dtype=float))
            return cache["out"]

        return cls(
            dimension,
            lambda x: float(_call(x)[0]),
            lambda x: np.asarray(_call(x)[1], dtype=float),
            evaluate_many,
        )

    def many(self, X: np.ndarray) -> np.ndarray:
        if self.evaluate_many is not None:
            return np.asarray(self.evaluate_many(X), dtype=float).reshape(len(X))
        return np.array([self.evaluate(x) for x in X], dtype=float)


def _numerical_gradient(obj, domain, x):
    h = 1e-6 * domain.width
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] = min(x[i] + h[i], domain.upper[i])
        xm[i] = max(x[i] - h[i], domain.lower[i])
        g[i] = (obj.evaluate(xp) - obj.evaluate(xm)) / (xp[i] - xm[i])
    return g


def local_maximize(obj: ObjectiveHandle, domain: BoxDomain, start, maxiter: int = 200):
    """Projected quasi-Newton (L-BFGS-B) ascent from ``start``.

    Never returns a point worse than the start.
    """
    start = np.asarray(start, dtype=float).ravel()
    if start.size != domain.dim or not domain.contains(start):
        raise ValueError("start must lie inside the domain")
    f0 = obj.evaluate(start)
    if not np.isfinite(f0):
        raise ValueError("objective is not finite at the start point")

    grad = obj.gradient
    if grad is None:
        grad = lambda x: _numerical_gradient(obj, domain, x)  # noqa: E731

    def neg(x):
        x = domain.clip(x)
        f = obj.evaluate(x)
        if not np.isfinite(f):
            return 1e300, np.zeros_like(x)
        return -f, -grad(x)

    res = optimize.minimize(
        neg, start, jac=True, method="L-BFGS-B",
        bounds=list(zip(domain.lower, domain.upper)), options={"maxiter": maxiter},
    )
    x = domain.clip(res.x)
    f = obj.evaluate(x)
    if not f >= f0:
        return start, float(f0)
    return x, float(f)


# pool size for screening multi-start points of acquisition optimizers
RAW_SAMPLES = 256


def multistart_starts(
    domain: BoxDomain, n_starts: int, seed: int, obj: Optional[ObjectiveHandle] = None, raw_samples: int = 0
) -> np.ndarray:
    """The domain center followed by ``n_starts - 1`` seeded uniform points.

    With ``raw_samples > 0`` every other start after the center is instead
    the best not yet used point of a seeded uniform pool of that size,
    scored by ``obj`` in one pass. Narrow high-value basins that plain
    uniform starts rarely hit are then still explored, while the remaining
    starts keep the search spread out. Starts for ``n`` are a prefix of the
    starts for ``n + 1`` either way.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    if raw_samples <= 0 or n_starts == 1:
        rest = seeded_uniform(domain, n_starts - 1, seed)
        return np.vstack([domain.center[None, :], rest])
    if obj is None:
        raise ValueError("screening starts needs the objective")
    pool = seeded_uniform(domain, raw_samples, split_seed(seed, 0))
    values = np.asarray(obj.many(pool), dtype=float)
    values = np.where(np.isfinite(values), values, -np.inf)
    ranked = pool[np.argsort(-values, kind="stable")]
    n_screened = n_starts // 2
    plain = seeded_uniform(domain, n_starts - 1 - n_screened, split_seed(seed, 1))
    starts = [domain.center]
    for k in range(1, n_starts):
        starts.append(ranked[(k - 1) // 2] if k % 2 else plain[k // 2 - 1])
    return np.array(starts)


def multistart_maximize(
    obj: ObjectiveHandle, domain: BoxDomain, n_starts: int, seed: int, raw_samples: int = 0
):
    """Best of ``n_starts`` local runs; ties go to the earlier start.

    ``raw_samples`` enables start screening (see :func:`multistart_starts`).
    """
    best_x, best_f = None, -np.inf
    for start in multistart_starts(domain, n_starts, seed, obj, raw_samples):
        x, f = local_maximize(obj, domain, start)
        if best_x is None or f > best_f:
            best_x, best_f = x, f
    return best_x, best_f


# --------------------------------------------------------------------------
# DIRECT


def _potentially_optimal(sizes, fvals, eps=1e-4):
    """Indices of rectangles on the lower-right convex hull (Jones et al.)."""
    order = np.lexsort((np.arange(len(sizes)), fvals, sizes))
    # best rectangle of each distinct size
    groups = {}
    for idx in order:
        groups.setdefault(sizes[idx], idx)
    uniq = sorted(groups)
    reps = [groups[s] for s in uniq]
    f_min = fvals[reps].min()
    # start at the largest size attaining f_min
    start = max(i for i, r in enumerate(reps) if fvals[r] == f_min)
    hull = []
    for r in reps[start:]:
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (sizes[b] - sizes[a]) * (fvals[r] - fvals[a]) - (fvals[b] - fvals[a]) * (
                sizes[r] - sizes[a]
            )
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(r)
    chosen = []
    for j, r in enumerate(hull):
        if j + 1 < len(hull):
            nxt = hull[j + 1]
            slope = (fvals[nxt] - fvals[r]) / (sizes[nxt] - sizes[r])
            if fvals[r] - slope * sizes[r] > f_min - eps * abs(f_min):
                continue
        chosen.append(r)
    return chosen


def direct_maximize(obj: ObjectiveHandle, domain: BoxDomain, eval_budget: int):
    """DIviding RECTangles global search.

    The first evaluation is the domain center, at most ``eval_budget``
    evaluations are made, and the best point seen is returned (ties go to the
    earliest evaluation).
    """
    if eval_budget < 1:
        raise ValueError("eval_budget must be >= 1")
    d = domain.dim
    centers = [np.full(d, 0.5)]
    levels = [np.zeros(d, dtype=int)]
    fvals = [-float(obj.many(domain.from_unit(centers[0])[None, :])[0])]
    used = 1
    while used < eval_budget:
        lev = np.array(levels)
        sizes = 0.5 * np.sqrt((9.0 ** (-lev)).sum(1))
        fv = np.array(fvals)
        fv_safe = np.where(np.isfinite(fv), fv, np.finfo(float).max)
        chosen = _potentially_optimal(sizes, fv_safe)

        plans, new_pts = [], []
        for r in chosen:
            long_dims = np.flatnonzero(levels[r] == levels[r].min())
            delta = 3.0 ** (-(levels[r].min() + 1))
            for i in long_dims:
                for sign in (1.0, -1.0):
                    u = centers[r].copy()
                    u[i] += sign * delta
                    new_pts.append(u)
            plans.append((r, long_dims))
        room = eval_budget - used
        new_pts = new_pts[:room]
        if not new_pts:
            break
        vals = -obj.many(domain.from_unit(np.array(new_pts)))
        used += len(new_pts)

        pos = 0
        for r, long_dims in plans:
            need = 2 * len(long_dims)
            if pos + need > len(new_pts):
                # budget ran out mid-division: keep the points, skip the split
                for k in range(pos, len(new_pts)):
                    centers.append(new_pts[k])
                    levels.append(levels[r] + 1)
                    fvals.append(float(vals[k]))
                pos = len(new_pts)
                break
            fp = vals[pos : pos + need : 2]
            fm = vals[pos + 1 : pos + need : 2]
            w = np.fmin(np.where(np.isnan(fp), np.inf, fp), np.where(np.isnan(fm), np.inf, fm))
            rank = np.argsort(w, kind="stable")
            parent_levels = levels[r].copy()
            for k in rank:
                i = long_dims[k]
                parent_levels[i] += 1
                for s in (0, 1):
                    centers.append(new_pts[pos + 2 * k + s])
                    levels.append(parent_levels.copy())
                    fvals.append(float(vals[pos + 2 * k + s]))
            levels[r] = parent_levels
            pos += need

    fv = np.array(fvals)
    fv = np.where(np.isnan(fv), np.inf, fv)
    best = int(np.argmin(fv))
    return domain.from_unit(centers[best]), -float(fv[best])
