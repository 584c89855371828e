"""Experiment sweeps: config files, result CSVs, manifests and parallel jobs.

A config is flat ``key = value`` text; list-valued keys may be repeated or
comma-separated::

    task = bo
    function = eggholder
    function = dropwave
    policy = EI
    policy = 8.EI.s
    repeats = 20
    base_seed = 0
    profile = desk
    output_dir = results/table1

Every field of :class:`~binoculars.policy.RunSettings` may also be set.
``timing = on`` records wall-clock acquisition seconds in the CSVs; it is
off by default because timings differ between reruns and would break
byte-identical outputs.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .acq_bq import _DPP_JITTER
from .benchmarks import HARD_BO, lookup, registry_bo, registry_bq
from .gp import JITTER, JITTER_ESCALATIONS
from .policy import POLICY_GRAMMAR, RunRecord, RunSettings, format_policy, parse_policy, run_policy
from .stats import RunSummary

CSV_COLUMNS = (
    "task", "function", "policy", "repeat", "iteration", "sel_x", "observed_y", "metric", "acq_seconds",
)
TASK_NAMES = {"bo": "maximize", "bq": "integrate"}
PROFILE_REPEATS = {"desk": 20, "full": 100}
MANIFEST = "manifest.txt"

_LIST_KEYS = {"function": "functions", "functions": "functions", "policy": "policies", "policies": "policies"}
_SETTING_TYPES = {f.name: f.type for f in fields(RunSettings)}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    task: str
    functions: Tuple[str, ...]
    policies: Tuple[str, ...]
    repeats: int
    base_seed: int = 0
    profile: str = "desk"
    output_dir: str = "results"
    budget: Optional[int] = None
    n_init: Optional[int] = None
    timing: bool = False
    settings: RunSettings = RunSettings()


def _cast_setting(name, text):
    kind = _SETTING_TYPES[name]
    if kind in ("int", int):
        return int(text)
    if kind in ("float", float):
        return float(text)
    return text


def parse_config(text: str, default_output: Optional[str] = None) -> RunConfig:
    """Parse config text; unknown keys and malformed policy strings are errors."""
    scalars: Dict[str, str] = {}
    lists: Dict[str, List[str]] = {"functions": [], "policies": []}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in _LIST_KEYS:
            lists[_LIST_KEYS[key]].extend(v.strip() for v in value.split(",") if v.strip())
        else:
            scalars[key] = value

    task = scalars.pop("task", "bo")
    if task not in TASK_NAMES:
        raise ConfigError(f"task must be 'bo' or 'bq', got {task!r}")
    profile = scalars.pop("profile", "desk")
    if profile not in PROFILE_REPEATS:
        raise ConfigError(f"profile must be 'desk' or 'full', got {profile!r}")
    functions = []
    for name in lists["functions"]:
        if name == "all-hard":
            functions.extend(HARD_BO)
        elif name == "all":
            functions.extend(e.name for e in (registry_bo() if task == "bo" else registry_bq()))
        else:
            lookup(name, TASK_NAMES[task])
            functions.append(name)
    if not functions or not lists["policies"]:
        raise ConfigError("config needs at least one function and one policy")
    policies = []
    for text_policy in lists["policies"]:
        # canonicalize so that file names and tables agree
        policies.append(format_policy(parse_policy(text_policy, TASK_NAMES[task])))

    settings = {}
    for name in list(scalars):
        if name in _SETTING_TYPES:
            settings[name] = _cast_setting(name, scalars.pop(name))
    repeats = int(scalars.pop("repeats", PROFILE_REPEATS[profile]))
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    output_dir = scalars.pop("output_dir", None) or default_output or os.environ.get("RESULTS_DIR", "results")
    budget = scalars.pop("budget", None)
    n_init = scalars.pop("n_init", None)
    timing = scalars.pop("timing", "off").lower()
    if timing not in ("on", "off"):
        raise ConfigError("timing must be 'on' or 'off'")
    config = RunConfig(
        task=task,
        functions=tuple(dict.fromkeys(functions)),
        policies=tuple(dict.fromkeys(policies)),
        repeats=repeats,
        base_seed=int(scalars.pop("base_seed", 0)),
        profile=profile,
        output_dir=output_dir,
        budget=None if budget is None else int(budget),
        n_init=None if n_init is None else int(n_init),
        timing=timing == "on",
        settings=replace(RunSettings(), **settings),
    )
    if scalars:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(scalars))}")
    return config


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


# --------------------------------------------------------------------------
# files


def atomic_write(path, text: str) -> None:
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _real(v) -> str:
    return format(float(v), ".17g")


def result_filename(task: str, function: str, policy: str, repeat: int) -> str:
    return f"{task}__{function}__{policy}__r{repeat:03d}.csv"


def record_to_csv(record: RunRecord, task: str, timing: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for e in record.entries:
        writer.writerow([
            task, record.function, record.policy, record.repeat, e.iteration,
            ";".join(_real(v) for v in e.selected), _real(e.observed), _real(e.metric),
            _real(e.acq_seconds if timing else 0.0),
        ])
    return buf.getvalue()


@dataclass(frozen=True)
class ResultRow:
    task: str
    function: str
    policy: str
    repeat: int
    iteration: int
    sel_x: np.ndarray
    observed_y: float
    metric: float
    acq_seconds: float


def read_result_csv(path) -> List[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: not a result file")
        rows = []
        for r in reader:
            rows.append(ResultRow(
                r[0], r[1], r[2], int(r[3]), int(r[4]),
                np.array([float(v) for v in r[5].split(";")]), float(r[6]), float(r[7]), float(r[8]),
            ))
    return rows


def read_manifest(path) -> Dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line and not line.lstrip().startswith("#"):
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


# --------------------------------------------------------------------------
# running


@dataclass(frozen=True)
class Job:
    task: str
    function: str
    policy: str
    repeat: int
    base_seed: int
    budget: Optional[int]
    n_init: Optional[int]
    settings: RunSettings
    output_dir: str
    timing: bool

    @property
    def filename(self) -> str:
        return result_filename(self.task, self.function, self.policy, self.repeat)


def jobs_for(config: RunConfig) -> List[Job]:
    return [
        Job(config.task, f, p, r, config.base_seed, config.budget, config.n_init,
            config.settings, config.output_dir, config.timing)
        for f in config.functions for p in config.policies for r in range(config.repeats)
    ]


def execute_job(job: Job) -> Tuple[str, str, str]:
    """Run one job and write its CSV; returns (file name, status, message)."""
    task = TASK_NAMES[job.task]
    obj = lookup(job.function, task).objective
    d = obj.dim
    budget = job.budget if job.budget is not None else 20 * d
    n_init = job.n_init if job.n_init is not None else 2 * d
    spec = parse_policy(job.policy, task, job.settings.mc_samples)
    # single-threaded BLAS keeps floating-point reductions identical in every worker
    with threadpool_limits(limits=1):
        record = run_policy(obj, spec, budget, n_init, job.base_seed, job.repeat, job.settings)
    atomic_write(Path(job.output_dir) / job.filename, record_to_csv(record, job.task, job.timing))
    return job.filename, record.status, record.message


def manifest_text(config: RunConfig, config_path: str, statuses) -> str:
    lines = [
        f"config = {config_path}",
        f"code_version = binoculars {__version__}",
        f"task = {config.task}",
        f"functions = {','.join(config.functions)}",
        f"policies = {','.join(config.policies)}",
        f"repeats = {config.repeats}",
        f"base_seed = {config.base_seed}",
        f"profile = {config.profile}",
        f"budget = {config.budget if config.budget is not None else '20*d'}",
        f"n_init = {config.n_init if config.n_init is not None else '2*d'}",
        f"timing = {'on' if config.timing else 'off'}",
        "seed_scheme = splitmix64: repeat = split(base_seed, repeat); init = split(repeat, 0);"
        " random = split(repeat, 1); integral nodes = split(repeat, 2);"
        " iteration i = split(repeat, 1000 + i) -> fit 0, acquisition 1, selection 2",
        f"jitter = {JITTER:g} x signal variance, up to {JITTER_ESCALATIONS} escalations x10",
        f"dpp_jitter = {_DPP_JITTER:g} x max(mean diagonal of expm1(K), 1)",
        "hyper_bounds = log lengthscale in [log 1e-3, log 10] (unit cube); log signal variance"
        " within +-10 of log response variance; noise in [1e-6, 1] x response variance",
        "penalizer = zero inside radius r, smoothstep ramp to one over [r, 1.1 r];"
        " r = max(mu* - m(x_j), 0) / L, L = max posterior-mean gradient norm; 5% diameter if L = 0",
        f"policy_grammar = {POLICY_GRAMMAR}",
    ]
    for key, value in asdict(config.settings).items():
        lines.append(f"setting.{key} = {value}")
    for name, status, message in sorted(statuses):
        lines.append(f"status.{name} = {status}" + (f": {message}" if message else ""))
    return "\n".join(lines) + "\n"


def run_config(config: RunConfig, config_path: str = "", jobs: int = 1):
    """Run every (function, policy, repeat) job; returns the list of statuses."""
    todo = jobs_for(config)
    if jobs <= 1:
        statuses = [execute_job(j) for j in todo]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            statuses = list(pool.map(execute_job, todo))
    atomic_write(Path(config.output_dir) / MANIFEST, manifest_text(config, config_path, statuses))
    return statuses


def summaries_from_dir(results_dir) -> List[RunSummary]:
    """One summary per result CSV in ``results_dir``; statuses come from the manifest."""
    results_dir = Path(results_dir)
    statuses = {}
    if (results_dir / MANIFEST).exists():
        for k, v in read_manifest(results_dir / MANIFEST).items():
            if k.startswith("status."):
                statuses[k[len("status."):]] = v.split(":", 1)[0].strip()
    out = []
    for path in sorted(results_dir.glob("*__*__*__r*.csv")):
        rows = read_result_csv(path)
        if not rows:
            status = statuses.get(path.name, "aborted")
            task, function, policy, rep = path.stem.split("__")
            out.append(RunSummary(task, function, policy, int(rep[1:]), float("nan"), status))
            continue
        last = rows[-1]
        out.append(RunSummary(
            last.task, last.function, last.policy, last.repeat, last.metric,
            statuses.get(path.name, "ok"),
        ))
    return out
