import math

import numpy as np
import pytest

from binoculars import benchmarks as bm
from binoculars.benchmarks import lookup, registry_bo, registry_bq

VECTORIZED_BO = {
    "eggholder": bm.eggholder, "dropwave": bm.dropwave, "shubert": bm.shubert,
    "rastrigin4": bm.rastrigin, "ackley2": bm.ackley, "ackley5": bm.ackley, "bukin": bm.bukin6,
    "shekel5": lambda x: bm.shekel(x, 5), "shekel7": lambda x: bm.shekel(x, 7), "branin": bm.branin,
    "hartmann3": bm.hartmann3, "hartmann6": bm.hartmann6, "rosenbrock2": bm.rosenbrock,
}
VECTORIZED_BQ = {
    "cont": bm.genz_continuous, "corner": bm.genz_corner, "discont": bm.genz_discontinuous,
    "gauss": bm.genz_gaussian, "prod": bm.genz_product, "mm": bm.multimodal, "gausspeak": bm.gaussian_peak,
}


def test_registries_complete_and_named():
    assert [e.name for e in registry_bo()] == list(VECTORIZED_BO)
    assert [e.name for e in registry_bq()] == list(VECTORIZED_BQ)
    assert set(bm.HARD_BO) <= set(VECTORIZED_BO)
    with pytest.raises(KeyError, match="branin"):
        lookup("nope")


def test_branin_minimizers():
    obj = lookup("branin").objective
    for x in ([-math.pi, 12.275], [math.pi, 2.275], [9.42478, 2.475]):
        assert obj.evaluate(np.array(x)) == pytest.approx(-0.397887, abs=1e-5)
    assert obj.known_optimum == pytest.approx(-0.397887, abs=1e-6)


def test_eggholder_reference_point():
    obj = lookup("eggholder").objective
    np.testing.assert_array_equal(obj.domain.lower, [-512, -512])
    np.testing.assert_array_equal(obj.domain.upper, [512, 512])
    assert obj.evaluate(np.array([512.0, 404.2319])) == pytest.approx(959.6407, abs=1e-4)


@pytest.mark.parametrize(
    "name, point",
    [
        ("dropwave", [0, 0]), ("rastrigin4", [0] * 4), ("ackley2", [0, 0]), ("ackley5", [0] * 5),
        ("bukin", [-10, 1]), ("rosenbrock2", [1, 1]),
        ("hartmann3", [0.114614, 0.555649, 0.852547]),
        ("hartmann6", [0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573]),
        ("shekel5", [4, 4, 4, 4]), ("shekel7", [4, 4, 4, 4]), ("shubert", [-7.0835, 4.8580]),
    ],
)
def test_published_minimizers_attain_optimum(name, point):
    obj = lookup(name).objective
    assert obj.evaluate(np.array(point, float)) == pytest.approx(obj.known_optimum, abs=2e-3)


@pytest.mark.parametrize("entry", registry_bo(), ids=lambda e: e.name)
def test_known_optimum_is_upper_bound(entry):
    obj = entry.objective
    rng = np.random.default_rng(0)
    X = obj.domain.from_unit(rng.random((10**6, obj.dim)))
    values = -VECTORIZED_BO[entry.name](X)
    assert values.max() <= obj.known_optimum + 1e-6
    # scalar and vectorized forms agree
    assert obj.evaluate(X[0]) == values[0]


@pytest.mark.parametrize("entry", registry_bq(), ids=lambda e: e.name)
def test_integrands_strictly_positive(entry):
    obj = entry.objective
    X = obj.domain.from_unit(np.random.default_rng(1).random((10**5, obj.dim)))
    assert np.all(VECTORIZED_BQ[entry.name](X) > 0)
    assert obj.known_integral > 0


def composite_legendre(breaks, per_panel):
    z, w = np.polynomial.legendre.leggauss(per_panel)
    nodes, weights = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        nodes.append(0.5 * (b - a) * z + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


@pytest.mark.parametrize("name", ["cont", "corner", "discont", "gauss", "prod", "mm"])
def test_integrals_match_tensor_quadrature(name):
    obj = lookup(name, "integrate").objective
    lo, hi = obj.domain.lower[0], obj.domain.upper[0]
    # panels split at the kink / jump locations so the rule sees smooth pieces
    breaks = np.unique(np.concatenate([np.linspace(lo, hi, 11), bm.GENZ_U if hi == 1 else []]))
    x, w = composite_legendre(breaks, 1000 // (len(breaks) - 1))
    w = w / (hi - lo)
    X = np.stack(np.meshgrid(x, x, indexing="ij"), -1).reshape(-1, 2)
    assert len(X) >= 10**6 * 0.9
    value = float(w @ VECTORIZED_BQ[name](X).reshape(len(x), len(x)) @ w)
    assert obj.known_integral == pytest.approx(value, rel=1e-9)


def test_multimodal_factor_mean_and_center_value():
    x, w = composite_legendre(np.linspace(-3, 3, 31), 100)
    g = (np.sin(x) + np.cos(3 * x)) ** 2 / 2 / (x**2 / 4 + 0.3)
    assert float(w @ g) / 6 == pytest.approx(bm.MM_MEAN_1D, rel=1e-12)
    # at the origin each factor is (0 + 1)^2 / 2 / 0.3 = 5/3
    assert bm.multimodal(np.zeros(2)) - bm.MM_SHIFT == pytest.approx((5 / 3) ** 2, rel=1e-14)


def test_gaussian_peak_closed_form():
    obj = lookup("gausspeak", "integrate").objective
    x, w = composite_legendre(np.linspace(-1, 1, 21), 50)
    assert obj.known_integral == pytest.approx(float(w @ bm.gaussian_peak(x[:, None])) / 2, abs=1e-8)
    assert obj.known_integral == pytest.approx(0.5 * math.erf(10 / math.sqrt(2)), abs=1e-15)
