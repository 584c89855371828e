"""Sequential design loop shared by every policy.

Each iteration refits the GP, proposes a batch sized to the remaining budget
(capped at ``q``), executes one point of it and records the outcome. The
final iteration therefore always reduces to the one-step policy.

Policy strings follow the nomenclature ``q.EI.s`` (batch EI, proportional
selection), ``q.EI.b`` (best), ``q.DPP.s``, ``q.R.n`` (rollout with ``n``
quadrature nodes), ``q.G`` (penalized batch lookahead), ``EI``, ``UNCT`` and
``Rand``.
"""

from __future__ import annotations

import math
import re
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .acq_bo import immediate_scores_bo, maximize_ei, optimize_qei
from .acq_bq import (
    IntegrationPrior,
    WarpedPosterior,
    immediate_scores_bq,
    integral_estimate,
    optimize_dpp,
)
from .gp import (
    BoxDomain,
    Dataset,
    GPHyperparams,
    GPModel,
    NumericalError,
    default_bounds,
    fit_hyperparams,
)
from .lookahead import GlassesSpec, RolloutSpec, glasses_select, rollout_select
from .optim import seeded_uniform, split_seed

POLICY_GRAMMAR = "q[.EI|.DPP][.s|.b] | q.R.n | q.G | EI | UNCT | Rand"

KINDS = ("random", "ei", "qei", "unct", "qdpp", "rollout", "glasses")
SELECTIONS = ("best", "proportional", "uniform")
TASKS = ("maximize", "integrate")

_BO_KINDS = ("random", "ei", "qei", "rollout", "glasses")
_BQ_KINDS = ("random", "unct", "qdpp")


class PolicyFormatError(ValueError):
    """A policy string outside the accepted grammar."""

    def __init__(self, text):
        super().__init__(f"cannot parse policy {text!r}; expected {POLICY_GRAMMAR}")


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    q: int = 1
    selection: Optional[str] = None
    gh_nodes: Optional[int] = None
    mc_samples: int = 512

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if (self.selection is not None) != (self.kind in ("qei", "qdpp")):
            raise ValueError("selection is required for batch policies and only for them")
        if self.selection is not None and self.selection not in SELECTIONS:
            raise ValueError(f"unknown selection {self.selection!r}")
        if self.kind == "rollout" and (self.gh_nodes is None or self.gh_nodes < 1):
            raise ValueError("rollout needs gh_nodes >= 1")
        if self.kind in ("rollout", "glasses") and self.q < 2:
            raise ValueError("lookahead baselines need q >= 2")

    @property
    def name(self) -> str:
        return format_policy(self)


_SUFFIX = {"s": "proportional", "b": "best"}
_BATCH_RE = re.compile(r"^(\d+)(?:\.(EI|DPP))?(?:\.([sb]))?$")
_ROLLOUT_RE = re.compile(r"^(\d+)\.R\.(\d+)$")
_GLASSES_RE = re.compile(r"^(\d+)\.G$")


def parse_policy(text: str, task: str = "maximize", mc_samples: int = 512) -> PolicySpec:
    """Parse a policy string.

    A batch string without a family (``"4.s"``) means batch EI for
    maximization and DPP for integration; a missing selection suffix means
    uniform selection.
    """
    text = text.strip()
    simple = {"EI": "ei", "UNCT": "unct", "Rand": "random"}
    if text in simple:
        return PolicySpec(simple[text], mc_samples=mc_samples)
    m = _ROLLOUT_RE.match(text)
    if m:
        q, n = int(m.group(1)), int(m.group(2))
        if q < 2 or n < 1:
            raise PolicyFormatError(text)
        return PolicySpec("rollout", q=q, gh_nodes=n, mc_samples=mc_samples)
    m = _GLASSES_RE.match(text)
    if m:
        if int(m.group(1)) < 2:
            raise PolicyFormatError(text)
        return PolicySpec("glasses", q=int(m.group(1)), mc_samples=mc_samples)
    m = _BATCH_RE.match(text)
    if m:
        q = int(m.group(1))
        if q < 1:
            raise PolicyFormatError(text)
        family = m.group(2) or ("DPP" if task == "integrate" else "EI")
        selection = _SUFFIX.get(m.group(3), "uniform")
        return PolicySpec(
            "qei" if family == "EI" else "qdpp", q=q, selection=selection, mc_samples=mc_samples
        )
    raise PolicyFormatError(text)


def format_policy(spec: PolicySpec) -> str:
    """Canonical string of a policy; inverse of :func:`parse_policy`."""
    if spec.kind == "ei":
        return "EI"
    if spec.kind == "unct":
        return "UNCT"
    if spec.kind == "random":
        return "Rand"
    if spec.kind == "rollout":
        return f"{spec.q}.R.{spec.gh_nodes}"
    if spec.kind == "glasses":
        return f"{spec.q}.G"
    family = "EI" if spec.kind == "qei" else "DPP"
    suffix = {"proportional": ".s", "best": ".b", "uniform": ""}[spec.selection]
    return f"{spec.q}.{family}{suffix}"


def select_from_batch(batch, scores, strategy: str, seed: int) -> int:
    """Index of the batch member to execute."""
    scores = np.asarray(scores, dtype=float).ravel()
    q = len(np.atleast_2d(batch))
    if q < 1 or scores.size != q:
        raise ValueError("need one score per batch member")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if np.any(scores < 0):
        raise ValueError("scores must be non-negative")
    if strategy not in SELECTIONS:
        raise ValueError(f"unknown selection strategy {strategy!r}")
    if q == 1:
        return 0
    if strategy == "best":
        return int(np.argmax(scores))
    rng = np.random.default_rng(seed)
    total = scores.sum()
    if strategy == "uniform" or total <= 0:
        return int(rng.integers(q))
    return int(rng.choice(q, p=scores / total))


def gap(best_observed: float, y_init_best: float, y_star: float) -> float:
    """Normalized progress (best - y0) / (y* - y0), clipped to [0, 1]."""
    if not y_star > y_init_best:
        return 1.0 if best_observed >= y_star else 0.0
    return float(np.clip((best_observed - y_init_best) / (y_star - y_init_best), 0.0, 1.0))


def fractional_error(z_hat: float, z_true: float) -> float:
    if not z_true > 0:
        raise ValueError("z_true must be positive")
    return abs(z_true - z_hat) / z_true


@dataclass(frozen=True)
class Objective:
    """A deterministic black box on a box domain."""

    name: str
    evaluate: Callable[[np.ndarray], float]
    domain: BoxDomain
    task: str = "maximize"
    known_optimum: Optional[float] = None
    known_integral: Optional[float] = None
    prior: Optional[IntegrationPrior] = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.task == "maximize" and self.known_optimum is None:
            raise ValueError("maximization objectives need a known optimum")
        if self.task == "integrate" and not (self.known_integral or 0) > 0:
            raise ValueError("integration objectives need a positive known integral")

    @property
    def dim(self) -> int:
        return self.domain.dim

    def integration_prior(self) -> IntegrationPrior:
        return self.prior if self.prior is not None else IntegrationPrior.uniform(self.domain)


@dataclass(frozen=True)
class RunSettings:
    """Numerical defaults of the loop; every value is written to the manifest."""

    fit_restarts: int = 10
    acq_starts: int = 20
    mc_samples: int = 512
    direct_outer: int = 500
    direct_inner: int = 100
    qmc_samples: int = 512
    lipschitz_points: int = 500
    integral_nodes: int = 2048
    log_floor: float = 1e-12
    bo_kernel: str = "matern52"
    bq_kernel: str = "matern32"


@dataclass(frozen=True)
class IterationEntry:
    iteration: int
    batch: np.ndarray
    selected: np.ndarray
    observed: float
    acq_seconds: float
    metric: float


@dataclass
class RunRecord:
    function: str
    task: str
    policy: str
    repeat: int
    base_seed: int
    repeat_seed: int
    budget: int
    initial_points: np.ndarray
    initial_values: np.ndarray
    entries: List[IterationEntry] = field(default_factory=list)
    hyper_trace: List[np.ndarray] = field(default_factory=list)
    status: str = "ok"
    message: str = ""

    @property
    def metric_trace(self) -> np.ndarray:
        return np.array([e.metric for e in self.entries])

    @property
    def final_metric(self) -> float:
        return float(self.entries[-1].metric) if self.entries else math.nan


class _Aborted(Exception):
    pass


def _fallback_hyper(kind, dim, y):
    # fewer than two observations: nothing to fit
    mean = float(y.mean()) if y.size else 0.0
    return GPHyperparams(mean, 1.0, np.full(dim, 0.25), 1e-6)


class _Surrogate:
    """Refits the GP on normalized data and keeps the previous fit as a warm start."""

    def __init__(self, obj: Objective, settings: RunSettings):
        self.obj = obj
        self.settings = settings
        self.kind = settings.bo_kernel if obj.task == "maximize" else settings.bq_kernel
        self.hyper = None

    def responses(self, values):
        if self.obj.task == "maximize":
            raw = values
        else:
            floor = self.settings.log_floor * max(float(values.max()), 1e-300)
            raw = np.log(np.maximum(values, floor))
        offset = float(raw.mean())
        scale = float(raw.std())
        if not scale > 0:
            scale = 1.0
        return (raw - offset) / scale, offset, scale

    def fit(self, U, values, seed):
        y, offset, scale = self.responses(values)
        data = Dataset(U, y)
        if len(data) < 2:
            hyper = _fallback_hyper(self.kind, U.shape[1], y)
        else:
            bounds = default_bounds(data, input_range=np.ones(U.shape[1]))
            hyper = fit_hyperparams(
                data, self.kind, bounds, self.settings.fit_restarts, seed, init=self.hyper
            )
        self.hyper = hyper
        return GPModel.build(self.kind, hyper, data), offset, scale


def _evaluate(obj, x):
    y = float(obj.evaluate(np.asarray(x, dtype=float)))
    if not math.isfinite(y):
        raise _Aborted(f"objective returned {y!r} at x = {np.asarray(x).tolist()}")
    return y


def _propose(spec, model, offset, scale, q_eff, y_std, unit, settings, seed, random_point):
    """(batch in unit coordinates, immediate scores or None, selection strategy)."""
    kind = spec.kind
    if kind == "random":
        return random_point[None, :], None, "best"
    if kind in _BQ_KINDS:
        wp = WarpedPosterior(model, offset, scale)
        if kind == "unct" or q_eff == 1:
            return optimize_dpp(wp, 1, unit, settings.acq_starts, seed), None, "best"
        batch = optimize_dpp(wp, q_eff, unit, settings.acq_starts, seed)
        return batch, immediate_scores_bq(wp, batch), spec.selection
    incumbent = float(y_std.max())
    if kind == "ei" or q_eff == 1:
        return maximize_ei(model, incumbent, unit, settings.acq_starts, seed)[None, :], None, "best"
    if kind == "qei":
        batch = optimize_qei(model, q_eff, incumbent, unit, settings.acq_starts, spec.mc_samples, seed)
        return batch, immediate_scores_bo(model, batch, incumbent), spec.selection
    if kind == "rollout":
        rs = RolloutSpec(q_eff, spec.gh_nodes, settings.direct_inner, settings.direct_outer)
        return rollout_select(model, incumbent, rs, unit)[None, :], None, "best"
    gs = GlassesSpec(
        q_eff, settings.qmc_samples, settings.lipschitz_points, settings.direct_inner, settings.direct_outer
    )
    return glasses_select(model, incumbent, gs, unit, seed)[None, :], None, "best"


def run_policy(
    obj: Objective,
    spec: PolicySpec,
    budget: int,
    n_init: int,
    base_seed: int,
    repeat_index: int,
    settings: RunSettings = RunSettings(),
) -> RunRecord:
    """Run ``budget`` iterations of ``spec`` on ``obj`` after ``n_init`` random points.

    Seeds: the repeat seed is ``split_seed(base_seed, repeat_index)``; its
    stream 0 draws the initial design (shared by every policy), stream 1
    the random policy's points, stream 2 the integral-estimate nodes and
    stream ``1000 + i`` the fit / acquisition / selection seeds of
    iteration ``i``.
    """
    if budget < 1 or n_init < 1:
        raise ValueError("budget and n_init must be >= 1")
    allowed = _BO_KINDS if obj.task == "maximize" else _BQ_KINDS
    if spec.kind not in allowed:
        raise ValueError(f"policy {format_policy(spec)} does not support task {obj.task!r}")

    domain = obj.domain
    unit = BoxDomain.unit(domain.dim)
    repeat_seed = split_seed(base_seed, repeat_index)
    U = seeded_uniform(unit, n_init, split_seed(repeat_seed, 0))
    random_points = seeded_uniform(unit, budget, split_seed(repeat_seed, 1))
    node_seed = split_seed(repeat_seed, 2)
    prior = obj.integration_prior().to_unit(domain) if obj.task == "integrate" else None

    record = RunRecord(
        function=obj.name, task=obj.task, policy=format_policy(spec), repeat=repeat_index,
        base_seed=base_seed, repeat_seed=repeat_seed, budget=budget,
        initial_points=domain.from_unit(U), initial_values=np.empty(0),
    )
    try:
        values = np.array([_evaluate(obj, x) for x in record.initial_points])
    except _Aborted as exc:
        record.status, record.message = "aborted", str(exc)
        return record
    record.initial_values = values.copy()
    y0 = float(values.max())
    if obj.task == "maximize" and not obj.known_optimum > y0:
        record.status = "degenerate"
        record.message = "initial design already attains the known optimum"

    surrogate = _Surrogate(obj, settings)
    needs_model = not (spec.kind == "random" and obj.task == "maximize")
    fitted = None
    try:
        for i in range(budget):
            iter_seed = split_seed(repeat_seed, 1000 + i)
            fit_seed, acq_seed, sel_seed = (split_seed(iter_seed, k) for k in range(3))
            q_eff = min(spec.q, budget - i)
            model = offset = scale = None
            if needs_model:
                if fitted is None:
                    fitted = surrogate.fit(U, values, fit_seed)
                model, offset, scale = fitted
                record.hyper_trace.append(model.hyper.to_vector())
            y_std = None if model is None else model.train.values

            start = time.perf_counter()
            batch, scores, strategy = _propose(
                spec, model, offset, scale, q_eff, y_std, unit, settings, acq_seed, random_points[i]
            )
            if scores is None:
                scores = np.zeros(len(batch))
            j = select_from_batch(batch, scores, strategy, sel_seed)
            elapsed = time.perf_counter() - start

            u = unit.clip(batch[j])
            x = domain.from_unit(u)
            y = _evaluate(obj, x)
            U = np.vstack([U, u])
            values = np.append(values, y)
            fitted = None

            if obj.task == "maximize":
                metric = gap(float(values.max()), y0, obj.known_optimum)
            else:
                next_fit = split_seed(split_seed(repeat_seed, 1000 + i + 1), 0)
                fitted = surrogate.fit(U, values, next_fit)
                wp = WarpedPosterior(*fitted)
                est = integral_estimate(wp, prior, settings.integral_nodes, node_seed)
                metric = fractional_error(est.z_mean, obj.known_integral)
            record.entries.append(
                IterationEntry(i, domain.from_unit(batch), x, y, elapsed, metric)
            )
    except _Aborted as exc:
        record.status, record.message = "aborted", str(exc)
    except NumericalError as exc:
        record.status, record.message = "aborted", f"numerical failure: {exc}"
    return record
