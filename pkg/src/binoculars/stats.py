"""Paired one-sided Wilcoxon signed-rank test and result tables."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Tuple

import numpy as np
from scipy.stats import norm, rankdata

EXACT_MAX_N = 12
MIN_N = 5
ALPHA = 0.05
METRICS = ("gap", "fracerr")


@dataclass(frozen=True)
class WilcoxonResult:
    p_value: float
    n: int
    statistic: float
    method: str  # "exact", "normal" or "insufficient"


def _exact_upper_tail(ranks, w_plus):
    # midranks are multiples of 1/2, so doubled ranks are integers
    twice = np.rint(2.0 * ranks).astype(int)
    counts = np.zeros(twice.sum() + 1, dtype=np.int64)
    counts[0] = 1
    for r in twice:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts = counts + shifted
    threshold = int(round(2.0 * w_plus))
    return counts[threshold:].sum() / float(2 ** len(twice))


def wilcoxon_test(paired_a, paired_b, method: str = "auto") -> WilcoxonResult:
    """One-sided signed-rank test of "a tends to be larger than b".

    Zero differences are dropped and tied magnitudes get midranks. Up to 12
    non-zero pairs the null distribution is enumerated exactly; above that a
    normal approximation with tie and continuity corrections is used.
    ``method`` ("exact" or "normal") forces one branch. With fewer than five
    non-zero pairs the test is not informative and p = 1.
    """
    if method not in ("auto", "exact", "normal"):
        raise ValueError(f"unknown method {method!r}")
    a = np.asarray(paired_a, dtype=float).ravel()
    b = np.asarray(paired_b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n < MIN_N:
        return WilcoxonResult(1.0, n, math.nan, "insufficient")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if method == "exact" or (method == "auto" and n <= EXACT_MAX_N):
        return WilcoxonResult(float(_exact_upper_tail(ranks, w_plus)), n, w_plus, "exact")
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    if var <= 0:
        return WilcoxonResult(1.0, n, w_plus, "normal")
    z = (w_plus - mean - 0.5) / math.sqrt(var)
    return WilcoxonResult(float(min(norm.sf(z), 1.0)), n, w_plus, "normal")


def wilcoxon_one_sided(paired_a, paired_b) -> float:
    """p-value of :func:`wilcoxon_test`."""
    return wilcoxon_test(paired_a, paired_b).p_value


# --------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class RunSummary:
    """The part of a run that aggregation needs."""

    task: str
    function: str
    policy: str
    repeat: int
    final_metric: float
    status: str = "ok"


@dataclass(frozen=True)
class Cell:
    value: float
    count: int
    best: bool
    not_worse: bool
    p_value: float


@dataclass
class AggregateTable:
    metric: str
    functions: List[str]
    policies: List[str]
    cells: Dict[Tuple[str, str], Cell]
    excluded: Dict[str, int] = field(default_factory=dict)

    AVERAGE = "Average"

    @property
    def rows(self) -> List[str]:
        return self.functions + ([self.AVERAGE] if len(self.functions) > 1 else [])

    def to_text(self) -> str:
        """Fixed-width table; '*' marks the best cell, '+' cells not significantly worse."""
        label = "mean GAP" if self.metric == "gap" else "median fractional error"
        width = max([len(p) for p in self.policies] + [10]) + 2
        fw = max([len(r) for r in self.rows] + [8]) + 2
        lines = [f"{label} ('*' best, '+' not significantly worse at alpha = {ALPHA})"]
        lines.append("function".ljust(fw) + "".join(p.rjust(width) for p in self.policies))
        for row in self.rows:
            parts = []
            for p in self.policies:
                c = self.cells[(row, p)]
                mark = "*" if c.best else ("+" if c.not_worse else " ")
                parts.append(f"{c.value:.3f}{mark}".rjust(width))
            lines.append(row.ljust(fw) + "".join(parts))
        counts = {self.cells[(f, self.policies[0])].count for f in self.functions}
        lines.append(f"repeats per cell: {', '.join(str(c) for c in sorted(counts))}")
        for f, k in sorted(self.excluded.items()):
            if k:
                lines.append(f"{f}: {k} repeat(s) excluded (degenerate or aborted)")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        out = ["function,policy,value,count,best,not_worse,p_value"]
        for row in self.rows:
            for p in self.policies:
                c = self.cells[(row, p)]
                out.append(
                    f"{row},{p},{c.value:.17g},{c.count},{int(c.best)},{int(c.not_worse)},{c.p_value:.17g}"
                )
        return "\n".join(out) + "\n"


def _better(metric):
    return (lambda u, v: u > v) if metric == "gap" else (lambda u, v: u < v)


def _summarize(metric, values):
    return float(np.mean(values)) if metric == "gap" else float(np.median(values))


def _mark_row(metric, samples, policies):
    """Cells for one row from equally long paired samples per policy."""
    better = _better(metric)
    values = {p: _summarize(metric, samples[p]) for p in policies}
    best = policies[0]
    for p in policies[1:]:
        if better(values[p], values[best]):
            best = p
    cells = {}
    for p in policies:
        if p == best:
            pval = 1.0
        elif metric == "gap":
            pval = wilcoxon_one_sided(samples[best], samples[p])
        else:
            pval = wilcoxon_one_sided(samples[p], samples[best])
        cells[p] = Cell(values[p], len(samples[p]), p == best, pval >= ALPHA, pval)
    return cells


def aggregate(records: Iterable, metric: str) -> AggregateTable:
    """Final-metric table over functions (rows) and policies (columns).

    ``metric`` is ``"gap"`` (mean, larger is better) or ``"fracerr"``
    (median, smaller is better). Repeats are paired by index; a repeat in
    which any policy was degenerate or aborted is dropped from its row and
    counted in ``excluded``. The Average row averages the row values and
    tests on all pooled pairs.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    records = list(records)
    if not records:
        raise ValueError("nothing to aggregate")
    tasks = {r.task for r in records}
    if len(tasks) != 1:
        raise ValueError(f"cannot aggregate mixed tasks {sorted(tasks)}")

    by_key = {}
    for r in records:
        key = (r.function, r.policy, int(r.repeat))
        if key in by_key:
            raise ValueError(f"duplicate run for {key}")
        by_key[key] = r
    functions = sorted({r.function for r in records})
    policies = sorted({r.policy for r in records})

    cells, excluded = {}, {}
    pooled = defaultdict(list)
    for f in functions:
        repeats = {p: {k[2] for k in by_key if k[0] == f and k[1] == p} for p in policies}
        reps = repeats[policies[0]]
        if any(repeats[p] != reps for p in policies):
            raise ValueError(f"runs for {f!r} are not paired: repeat sets differ across policies")
        usable = sorted(
            i for i in reps if all(by_key[(f, p, i)].status == "ok" for p in policies)
        )
        excluded[f] = len(reps) - len(usable)
        if not usable:
            raise ValueError(f"no usable repeats for {f!r}")
        samples = {p: np.array([by_key[(f, p, i)].final_metric for i in usable]) for p in policies}
        for p, c in _mark_row(metric, samples, policies).items():
            cells[(f, p)] = c
        for p in policies:
            pooled[p].append(samples[p])

    if len(functions) > 1:
        better = _better(metric)
        means = {p: float(np.mean([cells[(f, p)].value for f in functions])) for p in policies}
        flat = {p: np.concatenate(pooled[p]) for p in policies}
        best = policies[0]
        for p in policies[1:]:
            if better(means[p], means[best]):
                best = p
        for p in policies:
            if p == best:
                pval = 1.0
            elif metric == "gap":
                pval = wilcoxon_one_sided(flat[best], flat[p])
            else:
                pval = wilcoxon_one_sided(flat[p], flat[best])
            cells[(AggregateTable.AVERAGE, p)] = Cell(means[p], flat[p].size, p == best, pval >= ALPHA, pval)
    return AggregateTable(metric, functions, policies, cells, excluded)
