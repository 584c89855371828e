"""One-dimensional illustration of myopic versus batch versus lookahead EI.

A GP on [-1, 1] with two noiseless observations of zero at the endpoints.
EI alone picks the midpoint; the optimal pair of a two-point batch spreads
symmetrically away from it, and the first of that pair sits near a
maximizer of the exact two-step lookahead EI.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .acq_bo import draw_base_samples, ei_many, maximize_ei, optimize_qei, qei_mc
from .gp import BoxDomain, Dataset, GPHyperparams, GPModel
from .lookahead import RolloutSpec, rollout_acq
from .optim import split_seed

DEMO_LENGTHSCALE = 0.5
GRID_POINTS = 401
QEI_SAMPLES = 8192
GH_NODES = 32


def two_endpoint_model(lengthscale: float = DEMO_LENGTHSCALE) -> GPModel:
    """Matern 5/2, zero mean, unit signal variance, zeros observed at +-1."""
    hyper = GPHyperparams(0.0, 1.0, np.array([lengthscale]), 0.0)
    data = Dataset(np.array([[-1.0], [1.0]]), np.zeros(2))
    return GPModel.build("matern52", hyper, data)


@dataclass(frozen=True)
class DemoCurves:
    grid: np.ndarray
    ei: np.ndarray
    qei_slice: np.ndarray
    two_step: np.ndarray
    ei_choice: float
    qei_pair: np.ndarray
    two_step_choice: float


def demo_curves(seed: int = 0, n_grid: int = GRID_POINTS, lengthscale: float = DEMO_LENGTHSCALE) -> DemoCurves:
    """Dense EI, two-point batch EI and two-step EI curves.

    The batch EI curve is the slice ``x -> qEI({x, x2*})`` through the
    optimized pair, with ``x2*`` the member furthest from ``x``'s side of the
    pair. Two-step EI uses 32 Gauss-Hermite nodes and maximizes the second
    step exhaustively over the grid.
    """
    model = two_endpoint_model(lengthscale)
    domain = BoxDomain(np.array([-1.0]), np.array([1.0]))
    incumbent = 0.0
    grid = np.linspace(-1.0, 1.0, n_grid)
    X = grid[:, None]

    ei = np.asarray(ei_many(model, X, incumbent))
    ei_choice = float(maximize_ei(model, incumbent, domain, seed=split_seed(seed, 0))[0])

    pair = optimize_qei(
        model, 2, incumbent, domain, n_samples=QEI_SAMPLES, seed=split_seed(seed, 1)
    )[:, 0]
    pair = np.sort(pair)
    base = draw_base_samples(QEI_SAMPLES, 2, split_seed(split_seed(seed, 1), 0))
    # pair each grid point with the pair member on the other side
    partner = np.where(grid <= 0.5 * (pair[0] + pair[1]), pair[1], pair[0])
    qei_slice = np.array([qei_mc(model, [[x], [p]], incumbent, base) for x, p in zip(grid, partner)])

    spec = RolloutSpec(2, gh_nodes=GH_NODES)
    two_step = np.array([rollout_acq(model, [x], incumbent, spec, domain, candidates=X) for x in grid])
    two_step_choice = float(grid[int(np.argmax(two_step))])
    return DemoCurves(grid, ei, qei_slice, two_step, ei_choice, pair, two_step_choice)


def curves_to_csv(curves: DemoCurves) -> str:
    """Long-format CSV: ``curve, x, value``; chosen points follow the curves."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("curve", "x", "value"))
    f = lambda v: format(float(v), ".17g")  # noqa: E731
    for name, values in (("ei", curves.ei), ("qei2_slice", curves.qei_slice), ("two_step_ei", curves.two_step)):
        for x, v in zip(curves.grid, values):
            w.writerow((name, f(x), f(v)))
    w.writerow(("chosen_ei", f(curves.ei_choice), ""))
    for x in curves.qei_pair:
        w.writerow(("chosen_qei2", f(x), ""))
    w.writerow(("chosen_two_step_ei", f(curves.two_step_choice), ""))
    return buf.getvalue()
