"""Synthetic benchmark suites for optimization and integration.

Optimization functions are the usual minimization test problems negated so
that every entry is maximized; ``known_optimum`` is the negated global
minimum, polished with a bounded local search from the published minimizer.

Integration entries integrate against a uniform density on their box, so
``known_integral`` is the mean of the integrand over the box. Closed forms
are used where they exist; the registry tests check every constant against
a tensor Gauss-Legendre oracle with at least 10^6 nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List

import numpy as np
from scipy.special import erf

from .acq_bq import IntegrationPrior
from .gp import BoxDomain
from .policy import Objective


@dataclass(frozen=True)
class BenchmarkFunction:
    name: str
    objective: Objective
    reference: str


def _box(lower, upper, dim=None):
    if dim is not None:
        lower, upper = [lower] * dim, [upper] * dim
    return BoxDomain(np.array(lower, dtype=float), np.array(upper, dtype=float))


# --------------------------------------------------------------------------
# minimization test functions (vectorized over the last axis)


def eggholder(x):
    x1, x2 = x[..., 0], x[..., 1]
    return -(x2 + 47.0) * np.sin(np.sqrt(np.abs(x2 + x1 / 2.0 + 47.0))) - x1 * np.sin(
        np.sqrt(np.abs(x1 - (x2 + 47.0)))
    )


def dropwave(x):
    r2 = np.sum(x**2, axis=-1)
    return -(1.0 + np.cos(12.0 * np.sqrt(r2))) / (0.5 * r2 + 2.0)


def shubert(x):
    i = np.arange(1, 6)
    terms = np.sum(i * np.cos((i + 1) * x[..., None] + i), axis=-1)
    return np.prod(terms, axis=-1)


def rastrigin(x):
    return 10.0 * x.shape[-1] + np.sum(x**2 - 10.0 * np.cos(2.0 * np.pi * x), axis=-1)


def ackley(x):
    d = x.shape[-1]
    a = -20.0 * np.exp(-0.2 * np.sqrt(np.sum(x**2, axis=-1) / d))
    b = -np.exp(np.sum(np.cos(2.0 * np.pi * x), axis=-1) / d)
    return a + b + 20.0 + math.e


def bukin6(x):
    x1, x2 = x[..., 0], x[..., 1]
    return 100.0 * np.sqrt(np.abs(x2 - 0.01 * x1**2)) + 0.01 * np.abs(x1 + 10.0)


_SHEKEL_A = np.array(
    [
        [4, 4, 4, 4], [1, 1, 1, 1], [8, 8, 8, 8], [6, 6, 6, 6], [3, 7, 3, 7],
        [2, 9, 2, 9], [5, 5, 3, 3], [8, 1, 8, 1], [6, 2, 6, 2], [7, 3.6, 7, 3.6],
    ],
    dtype=float,
)
_SHEKEL_C = np.array([0.1, 0.2, 0.2, 0.4, 0.4, 0.6, 0.3, 0.7, 0.5, 0.5])


def shekel(x, m):
    sq = np.sum((x[..., None, :] - _SHEKEL_A[:m]) ** 2, axis=-1)
    return -np.sum(1.0 / (sq + _SHEKEL_C[:m]), axis=-1)


def branin(x):
    x1, x2 = x[..., 0], x[..., 1]
    b, c = 5.1 / (4.0 * np.pi**2), 5.0 / np.pi
    t = 1.0 / (8.0 * np.pi)
    return (x2 - b * x1**2 + c * x1 - 6.0) ** 2 + 10.0 * (1.0 - t) * np.cos(x1) + 10.0


_HART_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_HART3_A = np.array([[3.0, 10, 30], [0.1, 10, 35], [3.0, 10, 30], [0.1, 10, 35]])
_HART3_P = 1e-4 * np.array(
    [[3689, 1170, 2673], [4699, 4387, 7470], [1091, 8732, 5547], [381, 5743, 8828]]
)
_HART6_A = np.array(
    [
        [10, 3, 17, 3.5, 1.7, 8], [0.05, 10, 17, 0.1, 8, 14],
        [3, 3.5, 1.7, 10, 17, 8], [17, 8, 0.05, 10, 0.1, 14],
    ]
)
_HART6_P = 1e-4 * np.array(
    [
        [1312, 1696, 5569, 124, 8283, 5886], [2329, 4135, 8307, 3736, 1004, 9991],
        [2348, 1451, 3522, 2883, 3047, 6650], [4047, 8828, 8732, 5743, 1091, 381],
    ]
)


def _hartmann(x, A, P):
    inner = np.sum(A * (x[..., None, :] - P) ** 2, axis=-1)
    return -np.sum(_HART_ALPHA * np.exp(-inner), axis=-1)


def hartmann3(x):
    return _hartmann(x, _HART3_A, _HART3_P)


def hartmann6(x):
    return _hartmann(x, _HART6_A, _HART6_P)


def rosenbrock(x):
    return np.sum(100.0 * (x[..., 1:] - x[..., :-1] ** 2) ** 2 + (1.0 - x[..., :-1]) ** 2, axis=-1)


def _maximize(name, fn, domain, f_min, reference):
    def evaluate(x, fn=fn):
        return float(-fn(np.asarray(x, dtype=float)))

    obj = Objective(name, evaluate, domain, "maximize", known_optimum=-f_min)
    return BenchmarkFunction(name, obj, reference)


_SFU = "Surjanovic & Bingham virtual library of simulation experiments, optimization test problems"

HARD_BO = (
    "eggholder", "dropwave", "shubert", "rastrigin4", "ackley2", "ackley5", "bukin", "shekel5", "shekel7",
)


def registry_bo() -> List[BenchmarkFunction]:
    """Optimization suite, hard functions first; every entry is maximized."""
    return [
        _maximize("eggholder", eggholder, _box(-512, 512, 2), -959.6406627208507, _SFU),
        _maximize("dropwave", dropwave, _box(-5.12, 5.12, 2), -1.0, _SFU),
        _maximize("shubert", shubert, _box(-10, 10, 2), -186.73090883102392, _SFU),
        _maximize("rastrigin4", rastrigin, _box(-5.12, 5.12, 4), 0.0, _SFU),
        _maximize("ackley2", ackley, _box(-32.768, 32.768, 2), 0.0, _SFU),
        _maximize("ackley5", ackley, _box(-32.768, 32.768, 5), 0.0, _SFU),
        _maximize("bukin", bukin6, _box([-15, -3], [-5, 3]), 0.0, _SFU + " (Bukin N.6)"),
        _maximize("shekel5", lambda x: shekel(x, 5), _box(0, 10, 4), -10.153199679058229, _SFU),
        _maximize("shekel7", lambda x: shekel(x, 7), _box(0, 10, 4), -10.402940566818662, _SFU),
        _maximize("branin", branin, _box([-5, 0], [10, 15]), 0.39788735772973816, _SFU),
        _maximize("hartmann3", hartmann3, _box(0, 1, 3), -3.862779787332663, _SFU),
        _maximize("hartmann6", hartmann6, _box(0, 1, 6), -3.3223680114155147, _SFU),
        _maximize("rosenbrock2", rosenbrock, _box(-5, 10, 2), 0.0, _SFU),
    ]


# --------------------------------------------------------------------------
# integrands


GENZ_A = np.array([5.0, 5.0])
GENZ_U = np.array([0.4, 0.6])
# the discontinuous integrand is zero on most of the box; this floor keeps
# its logarithm finite
DISCONT_FLOOR = 1e-3
MM_SHIFT = 1e-3
# mean of (sin x + cos 3x)^2 / 2 / (x^2 / 4 + 0.3) over [-3, 3]; adaptive
# quadrature to 1e-14, confirmed by a 10^6-node Gauss-Legendre rule
MM_MEAN_1D = 0.6937264455187409


def genz_continuous(x, a=GENZ_A, u=GENZ_U):
    return np.exp(-np.sum(a * np.abs(x - u), axis=-1))


def genz_corner(x, a=GENZ_A):
    return (1.0 + np.sum(a * x, axis=-1)) ** (-(x.shape[-1] + 1))


def genz_discontinuous(x, a=GENZ_A, u=GENZ_U):
    inside = np.all(x <= u, axis=-1)
    return np.where(inside, np.exp(np.sum(a * x, axis=-1)), 0.0) + DISCONT_FLOOR


def genz_gaussian(x, a=GENZ_A, u=GENZ_U):
    return np.exp(-np.sum(a**2 * (x - u) ** 2, axis=-1))


def genz_product(x, a=GENZ_A, u=GENZ_U):
    return np.prod(1.0 / (a ** (-2.0) + (x - u) ** 2), axis=-1)


def multimodal(x):
    g = (np.sin(x) + np.cos(3.0 * x)) ** 2 / 2.0 / (x**2 / 4.0 + 0.3)
    return np.prod(g, axis=-1) + MM_SHIFT


GAUSS_PEAK_SD = 0.1


def gaussian_peak(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * np.sum(x**2, axis=-1) / GAUSS_PEAK_SD**2) / (
        math.sqrt(2.0 * math.pi) * GAUSS_PEAK_SD
    )


def _integrals(a=GENZ_A, u=GENZ_U):
    cont = np.prod((2.0 - np.exp(-a * u) - np.exp(-a * (1.0 - u))) / a)
    a1, a2 = a
    corner = (1.0 - 1.0 / (1.0 + a1) - 1.0 / (1.0 + a2) + 1.0 / (1.0 + a1 + a2)) / (2.0 * a1 * a2)
    discont = np.prod(np.expm1(a * u) / a) + DISCONT_FLOOR
    gauss = np.prod(math.sqrt(math.pi) / (2.0 * a) * (erf(a * (1.0 - u)) + erf(a * u)))
    prod = np.prod(a * (np.arctan(a * (1.0 - u)) + np.arctan(a * u)))
    return {"cont": cont, "corner": corner, "discont": discont, "gauss": gauss, "prod": prod}


def gaussian_peak_integral() -> float:
    """Mean of the N(0, 0.1^2) density over [-1, 1]."""
    return 0.5 * math.erf(1.0 / (GAUSS_PEAK_SD * math.sqrt(2.0)))


def _integrand(name, fn, domain, z, reference):
    def evaluate(x, fn=fn):
        return float(fn(np.asarray(x, dtype=float)))

    prior = IntegrationPrior.uniform(domain)
    obj = Objective(name, evaluate, domain, "integrate", known_integral=float(z), prior=prior)
    return BenchmarkFunction(name, obj, reference)


_GENZ_REF = (
    f"Genz test integrand family (Surjanovic & Bingham integration problems), a = {GENZ_A.tolist()},"
    f" u = {GENZ_U.tolist()}"
)


def registry_bq() -> List[BenchmarkFunction]:
    """Integration suite: five Genz integrands in 2-D, the multimodal product
    function in 2-D and a 1-D Gaussian peak."""
    z = _integrals()
    unit2 = _box(0, 1, 2)
    return [
        _integrand("cont", genz_continuous, unit2, z["cont"], _GENZ_REF),
        _integrand("corner", genz_corner, unit2, z["corner"], _GENZ_REF),
        _integrand("discont", genz_discontinuous, unit2, z["discont"], _GENZ_REF + f", floor {DISCONT_FLOOR}"),
        _integrand("gauss", genz_gaussian, unit2, z["gauss"], _GENZ_REF),
        _integrand("prod", genz_product, unit2, z["prod"], _GENZ_REF),
        _integrand(
            "mm", multimodal, _box(-3, 3, 2), MM_MEAN_1D**2 + MM_SHIFT,
            f"product of (sin x + cos 3x)^2 / 2 / (x^2 / 4 + 0.3) on [-3, 3]^2, shift {MM_SHIFT}",
        ),
        _integrand(
            "gausspeak", gaussian_peak, _box(-1, 1, 1), gaussian_peak_integral(),
            "N(x; 0, 0.1^2) density under a uniform prior on [-1, 1]",
        ),
    ]


def lookup(name: str, task: str = "maximize") -> BenchmarkFunction:
    registry = registry_bo() if task == "maximize" else registry_bq()
    for entry in registry:
        if entry.name == name:
            return entry
    known = ", ".join(e.name for e in registry)
    raise KeyError(f"unknown {task} benchmark {name!r}; known: {known}")
