"""Seeded Monte-Carlo campaigns: convergence curves, RE versus surface size,
and the SE-EE trade-off obtained by sweeping the SE weight.

Every trial is independent. Trials may run in worker processes, but results
are always gathered and written in sorted order by a single writer, so the
CSV bytes only depend on the configuration and the master seed.
"""

from __future__ import annotations

import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..baselines import SchemeSpec, run_scheme
from ..channel import GeometryConfig, generate, trial_seeds
from ..model import SystemConfig
from ..optimizer.ao import SolveOptions
from ..units import dbm_to_watt
from . import output
from .config import Scenario, dump_config
from .output import Table

log = logging.getLogger(__name__)

DEFAULT_SCHEMES = {
    "convergence": ("proposed",),
    "re_vs_m": ("proposed", "passive_star", "zf", "ideal_hw", "csi_random", "csi_worst"),
    "se_ee_tradeoff": ("proposed",),
    "single_solve": ("proposed",),
}


def sub_seed(seed: int, tag: int) -> int:
    """Independent stream derived from a trial seed (``tag`` 0 is the channel)."""
    return int(np.random.SeedSequence([seed, tag]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class Task:
    key: tuple
    scheme: SchemeSpec
    cfg: SystemConfig
    geometry: GeometryConfig
    options: SolveOptions
    seed: int


@dataclass
class Outcome:
    key: tuple
    seed: int
    ok: bool
    error: str = ""
    re: float = float("nan")
    se: float = float("nan")
    ee: float = float("nan")
    p_tot: float = float("nan")
    feasible: bool = False
    converged: bool = False
    outer: int = 0
    re_history: list = field(default_factory=list)
    alpha_history: list = field(default_factory=list)
    wall_time: float = 0.0


def run_task(task: Task) -> Outcome:
    """One scheme on one channel realization; never raises."""
    started = time.perf_counter()
    try:
        ch = generate(task.geometry, task.cfg, seed=sub_seed(task.seed, 0))
        res = run_scheme(task.scheme, ch, task.cfg, task.options, csi_seed=sub_seed(task.seed, 1))
    except Exception as exc:  # a failed trial is recorded, never fatal
        log.warning("trial %s failed: %s", task.key, exc)
        log.debug("%s", traceback.format_exc())
        return Outcome(task.key, task.seed, False, f"{type(exc).__name__}: {exc}",
                       wall_time=time.perf_counter() - started)
    m = res.metrics
    tr = res.trace
    return Outcome(
        key=task.key, seed=task.seed, ok=True, re=m.re, se=m.se, ee=m.ee, p_tot=m.p_tot,
        feasible=res.feasibility.ok(1e-6), converged=tr.converged, outer=len(tr.outer),
        re_history=list(tr.re_history), alpha_history=list(tr.alpha_history),
        wall_time=time.perf_counter() - started,
    )


def run_tasks(tasks: list[Task], workers: int = 1, progress=None) -> list[Outcome]:
    if workers <= 1:
        out = []
        for i, t in enumerate(tasks):
            out.append(run_task(t))
            if progress:
                progress(i + 1, len(tasks), out[-1])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(run_task, tasks))
    return sorted(out, key=lambda o: o.key)


@dataclass
class ExperimentResult:
    name: str
    tables: list[Table]
    outcomes: list[Outcome]
    seeds: list[int]
    wall_time: float

    @property
    def failures(self) -> int:
        return sum(not o.ok for o in self.outcomes)

    def table(self, name: str) -> Table:
        return next(t for t in self.tables if t.name == name)


def _schemes(scenario: Scenario, experiment: str, schemes) -> list[str]:
    if schemes:
        return list(schemes)
    if scenario.experiment.schemes is not None:
        return list(scenario.experiment.schemes)
    return list(DEFAULT_SCHEMES[experiment])


def _stats(values) -> tuple[float, float, int]:
    v = np.asarray([x for x in values if np.isfinite(x)], float)
    if v.size == 0:
        return float("nan"), float("nan"), 0
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return float(np.mean(v)), std, int(v.size)


def _trial_table(name: str, outcomes: list[Outcome], key_columns: list[tuple[str, str]]) -> Table:
    t = Table(name, key_columns + [
        ("trial", "count"), ("seed", "none"), ("status", "label"), ("re", "re"), ("se", "se"),
        ("ee", "ee"), ("p_tot", "power"), ("feasible", "label"), ("converged", "label"), ("outer_iterations", "count"),
    ])
    for o in outcomes:
        t.rows.append(tuple(o.key) + (o.seed, "ok" if o.ok else "failed", o.re, o.se, o.ee, o.p_tot,
                                      o.feasible, o.converged, o.outer))
    return t


# ---------------------------------------------------------------------------
# experiments


def run_convergence(scenario: Scenario, schemes=None, verbose: bool = False, progress=None) -> ExperimentResult:
    """RE after every outer iteration, per BS antenna count.

    Trials that stop early keep contributing their final RE to later
    iterations, so every curve covers the longest run.
    """
    spec = scenario.experiment
    seeds = trial_seeds(spec.seed, spec.trials)
    schemes = _schemes(scenario, "convergence", schemes)
    tasks = []
    for N in spec.n_grid:
        cfg = scenario.system_for(N=N)
        for t, s in enumerate(seeds):
            for sc in schemes:
                tasks.append(Task((sc, N, t), scenario.file.schemes.spec(sc), cfg, scenario.geometry,
                                  scenario.options(s, verbose), s))
    started = time.perf_counter()
    outcomes = run_tasks(tasks, spec.workers, progress)

    curves = Table("convergence", [("scheme", "label"), ("N", "count"), ("iteration", "count"), ("mean_re", "re"),
                                   ("std_re", "re"), ("trials_ok", "count"), ("trials_failed", "count")])
    per_trial = Table("convergence_trials", [("scheme", "label"), ("N", "count"), ("trial", "count"),
                                             ("seed", "none"), ("iteration", "count"), ("re", "re"), ("alpha", "none")])
    for sc in schemes:
        for N in spec.n_grid:
            group = [o for o in outcomes if o.key[0] == sc and o.key[1] == N]
            ok = [o for o in group if o.ok]
            for o in ok:
                for i, (re, a) in enumerate(zip(o.re_history, o.alpha_history)):
                    per_trial.rows.append((sc, N, o.key[2], o.seed, i, re, a))
            length = max((len(o.re_history) for o in ok), default=0)
            for i in range(length):
                vals = [o.re_history[min(i, len(o.re_history) - 1)] for o in ok]
                mean, std, n = _stats(vals)
                curves.rows.append((sc, N, i, mean, std, n, len(group) - len(ok)))
    return ExperimentResult("convergence", [curves, per_trial], outcomes, seeds, time.perf_counter() - started)


def run_re_vs_m(scenario: Scenario, schemes=None, verbose: bool = False, progress=None) -> ExperimentResult:
    """Mean RE per scheme and surface size with ``omega / P_max`` held fixed.

    Channels are paired across schemes: trial ``t`` at size ``M`` uses the
    same realization for every scheme.
    """
    spec = scenario.experiment
    seeds = trial_seeds(spec.seed, spec.trials)
    schemes = _schemes(scenario, "re_vs_m", schemes)
    tasks = []
    for sc in schemes:
        for M in spec.m_grid:
            cfg = scenario.system_for(M=M)
            for t, s in enumerate(seeds):
                tasks.append(Task((sc, M, t), scenario.file.schemes.spec(sc), cfg, scenario.geometry,
                                  scenario.options(s, verbose), s))
    started = time.perf_counter()
    outcomes = run_tasks(tasks, spec.workers, progress)
    order = {sc: i for i, sc in enumerate(schemes)}
    outcomes.sort(key=lambda o: (order[o.key[0]], o.key[1], o.key[2]))

    summary = Table("re_vs_m", [("scheme", "label"), ("M", "count"), ("mean_re", "re"), ("std_re", "re"),
                                ("mean_se", "se"), ("mean_p_tot", "power"), ("trials_ok", "count"),
                                ("trials_failed", "count"), ("trials_infeasible", "count")])
    for sc in schemes:
        for M in spec.m_grid:
            group = [o for o in outcomes if o.key[:2] == (sc, M)]
            ok = [o for o in group if o.ok]
            mean, std, n = _stats([o.re for o in ok])
            summary.rows.append((sc, M, mean, std, _stats([o.se for o in ok])[0], _stats([o.p_tot for o in ok])[0],
                                 n, len(group) - len(ok), sum(not o.feasible for o in ok)))
    trials = _trial_table("re_vs_m_trials", outcomes, [("scheme", "label"), ("M", "count")])
    return ExperimentResult("re_vs_m", [summary, trials], outcomes, seeds, time.perf_counter() - started)


def pareto_front(points: list[tuple[float, float]]) -> list[bool]:
    """Non-dominated flags for (SE, EE) pairs, both maximized."""
    flags = []
    for i, (a, b) in enumerate(points):
        dominated = any(
            (c >= a and d >= b) and (c > a or d > b) for j, (c, d) in enumerate(points) if j != i
        )
        flags.append(not dominated and np.isfinite(a) and np.isfinite(b))
    return flags


def run_se_ee_tradeoff(scenario: Scenario, schemes=None, verbose: bool = False, progress=None) -> ExperimentResult:
    """(SE, EE) per BS budget and SE weight, plus the non-dominated points per budget."""
    spec = scenario.experiment
    seeds = trial_seeds(spec.seed, spec.trials)
    schemes = _schemes(scenario, "se_ee_tradeoff", schemes)
    tasks = []
    for sc in schemes:
        for pb in spec.p_bs_max_dbm_grid:
            base = scenario.system_for(p_bs_max=dbm_to_watt(pb))
            for w in spec.omega_ratio_grid:
                cfg = base.with_updates(omega=w * base.p_max)
                for t, s in enumerate(seeds):
                    tasks.append(Task((sc, pb, w, t), scenario.file.schemes.spec(sc), cfg, scenario.geometry,
                                      scenario.options(s, verbose), s))
    started = time.perf_counter()
    outcomes = run_tasks(tasks, spec.workers, progress)

    summary = Table("se_ee", [("scheme", "label"), ("p_bs_max_dbm", "dbm"), ("omega_ratio", "none"),
                              ("mean_se", "se"), ("std_se", "se"), ("mean_ee", "ee"), ("std_ee", "ee"),
                              ("mean_re", "re"), ("trials_ok", "count"), ("trials_failed", "count"),
                              ("pareto", "label")])
    for sc in schemes:
        for pb in spec.p_bs_max_dbm_grid:
            rows = []
            for w in spec.omega_ratio_grid:
                group = [o for o in outcomes if o.key[:3] == (sc, pb, w)]
                ok = [o for o in group if o.ok]
                se, sse, n = _stats([o.se for o in ok])
                ee, see, _ = _stats([o.ee for o in ok])
                rows.append([sc, pb, w, se, sse, ee, see, _stats([o.re for o in ok])[0], n, len(group) - len(ok)])
            flags = pareto_front([(r[3], r[5]) for r in rows])
            summary.rows.extend(tuple(r + [f]) for r, f in zip(rows, flags))
    trials = _trial_table("se_ee_trials", outcomes, [("scheme", "label"), ("p_bs_max_dbm", "dbm"),
                                                    ("omega_ratio", "none")])
    return ExperimentResult("se_ee", [summary, trials], outcomes, seeds, time.perf_counter() - started)


def run_single(scenario: Scenario, schemes=None, verbose: bool = False, progress=None) -> ExperimentResult:
    """One solve per scheme at the configured scenario; the trace is tabulated per outer iteration."""
    spec = scenario.experiment
    seeds = trial_seeds(spec.seed, spec.trials)
    schemes = _schemes(scenario, "single_solve", schemes)
    tasks = [Task((sc, t), scenario.file.schemes.spec(sc), scenario.system, scenario.geometry,
                  scenario.options(s, verbose), s) for sc in schemes for t, s in enumerate(seeds)]
    started = time.perf_counter()
    outcomes = run_tasks(tasks, spec.workers, progress)
    order = {sc: i for i, sc in enumerate(schemes)}
    outcomes.sort(key=lambda o: (order[o.key[0]], o.key[1]))
    trace = Table("solve_trace", [("scheme", "label"), ("trial", "count"), ("iteration", "count"),
                                  ("alpha", "none"), ("re", "re")])
    for o in outcomes:
        for i, (a, re) in enumerate(zip(o.alpha_history, o.re_history)):
            trace.rows.append((o.key[0], o.key[1], i, a, re))
    final = _trial_table("solve", outcomes, [("scheme", "label")])
    return ExperimentResult("solve", [final, trace], outcomes, seeds, time.perf_counter() - started)


RUNNERS = {
    "convergence": run_convergence,
    "re_vs_m": run_re_vs_m,
    "se_ee_tradeoff": run_se_ee_tradeoff,
    "single_solve": run_single,
}

PLOTS = {
    "convergence": ("convergence", output.plot_convergence),
    "re_vs_m": ("re_vs_m", output.plot_re_vs_m),
    "se_ee": ("se_ee", output.plot_se_ee),
}


def emit(result: ExperimentResult, scenario: Scenario, out_dir: str | Path, plots: bool = True) -> list[Path]:
    """Write every table as CSV, the metadata file, and (optionally) the SVG plot."""
    out_dir = Path(out_dir)
    paths = [output.write_csv(t, out_dir) for t in result.tables]
    paths.append(output.write_metadata(out_dir, result.name, {
        "experiment": result.name,
        "config": dump_config(scenario),
        "master_seed": scenario.experiment.seed,
        "trial_seeds": result.seeds,
        "trials": len(result.outcomes),
        "failures": [{"key": list(o.key), "seed": o.seed, "error": o.error} for o in result.outcomes if not o.ok],
        "wall_time_s": result.wall_time,
        "trial_wall_time_s": {"/".join(map(str, o.key)): o.wall_time for o in result.outcomes},
    }))
    if plots and result.name in PLOTS:
        table, draw = PLOTS[result.name]
        paths.append(draw(out_dir / f"{table}.csv", out_dir / f"{table}.svg"))
    return paths
