"""Alternating optimization driver: quadratic-transform outer loop around an
inner loop that alternates the precoder and STAR-RIS steps."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import conic
from ..model import (
    SIDES,
    Beamformers,
    ChannelSet,
    FeasibilityReport,
    MetricsReport,
    StarCoefficients,
    SystemConfig,
    cascaded_channels,
    check_feasibility,
    efficiency_metrics,
    p_act,
    p_bs,
)
from .operators import derive
from .ris import build_ris_standard, recover_rank_one
from .surrogate import SurrogateState, qt_objective, update_alpha
from .transmit import build_transmit_subproblem

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
ASCENT_SLACK = 1e-9


class SolveError(RuntimeError):
    """A subproblem failed; ``trace`` holds everything recorded so far."""

    def __init__(self, message: str, trace: "SolveTrace | None" = None):
        super().__init__(message)
        self.trace = trace


class InitializationError(SolveError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    max_outer: int = 30
    max_inner: int = 20
    n_randomizations: int = 50
    solver_tol: float = 1e-8
    solver_max_iter: int = 200
    seed: int = 0
    init_retries: int = 10
    restore_iters: int = 20
    epsilon: float | None = None  # overrides cfg.epsilon
    inner_tol: float | None = None  # overrides cfg.inner_tol
    verbose: bool = False


@dataclass
class StepRecord:
    block: str  # transmit | ris
    status: str  # solver status, or accepted / rejected
    objective: float  # quadratic-transform objective after the step
    relaxed: float | None = None  # optimum of the relaxed / surrogate program
    surrogate: float | None = None  # relaxed objective at the recovered rank-one point
    source: str | None = None
    min_slack: float = float("nan")  # smallest constraint slack of the iterate kept after the step


@dataclass
class OuterIteration:
    alpha: float
    inner_objectives: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    re: float = float("nan")
    se: float = float("nan")
    p_tot: float = float("nan")
    next_alpha: float = float("nan")


@dataclass
class SolveTrace:
    outer: list = field(default_factory=list)
    beamformers: Beamformers | None = None
    star: StarCoefficients | None = None
    metrics: MetricsReport | None = None
    feasibility: FeasibilityReport | None = None
    converged: bool = False
    wall_time: float = 0.0
    initial_re: float = float("nan")
    init_info: dict = field(default_factory=dict)

    @property
    def alpha_history(self) -> list[float]:
        if not self.outer:
            return []
        return [self.outer[0].alpha] + [o.next_alpha for o in self.outer]

    @property
    def re_history(self) -> list[float]:
        return [self.initial_re] + [o.re for o in self.outer]

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "outer_iterations": len(self.outer),
            "inner_iterations": [len(o.inner_objectives) - 1 for o in self.outer],
            "alpha_history": self.alpha_history,
            "re_history": self.re_history,
            "wall_time": self.wall_time,
            "metrics": self.metrics.as_dict() if self.metrics else None,
            "feasibility": self.feasibility.as_dict() if self.feasibility else None,
        }


def objective_at(alpha, bf, star, ch, cfg) -> float:
    m = efficiency_metrics(bf, star, ch, cfg)
    return qt_objective(alpha, m.se, m.p_tot, cfg)


def _solve(program, options: SolveOptions) -> conic.ConicSolution:
    backend = conic.solve_standard if isinstance(program, conic.StandardProgram) else conic.solve
    sol = backend(program, tol=options.solver_tol, max_iter=options.solver_max_iter)
    if not sol.optimal and sol.status in ("numerical_failure", "iteration_limit"):
        retry = backend(program, tol=max(options.solver_tol * 100, 1e-6), max_iter=2 * options.solver_max_iter)
        retry.stats["retried"] = True
        return retry
    return sol


# ---------------------------------------------------------------------------
# initialization


def _initial_star(cfg: SystemConfig, rng: np.random.Generator) -> StarCoefficients:
    amp = np.sqrt(0.5) if cfg.passive else np.sqrt(cfg.rho_max)
    phases = rng.uniform(0, 2 * np.pi, size=(2, cfg.M))
    return StarCoefficients(amp * np.exp(1j * phases[0]), amp * np.exp(1j * phases[1]))


def matched_filter(star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig) -> Beamformers:
    H = cascaded_channels(star, ch, cfg)
    norms = np.linalg.norm(H, axis=1, keepdims=True)
    directions = H / np.where(norms > 0, norms, 1.0)
    return Beamformers(directions * np.sqrt(cfg.p_bs_max / cfg.K))


def fit_amplification_budget(bf, star, ch, cfg, margin=0.5):
    """Shrink element gains, then precoders, until P_act sits at ``margin`` of its budget."""
    if cfg.passive:
        return bf, star
    budget = margin * cfg.p_ris_max
    pa = p_act(bf, star, ch, cfg)
    if pa > budget:
        star = star.scaled(np.sqrt(budget / pa))
    pa = p_act(bf, star, ch, cfg)
    if pa > cfg.p_ris_max:
        noise = cfg.sigma_a2 * sum(float(np.sum(star.beta(s))) for s in SIDES)
        signal = pa - noise
        room = max(cfg.p_ris_max - noise, 0.0)
        bf = bf.scaled(np.sqrt(room / signal) * (1 - 1e-9)) if signal > 0 else bf
    return bf, star


def _restore(bf, star, ch, cfg, options) -> tuple[Beamformers, bool, int]:
    for it in range(options.restore_iters):
        if check_feasibility(bf, star, ch, cfg).ok(FEAS_TOL):
            return bf, True, it
        state = SurrogateState.at(bf, star, ch, cfg, alpha=0.0)
        ops = derive(bf, star, ch, cfg)
        tp = build_transmit_subproblem(state, ops, star, ch, cfg, restore=True)
        sol = _solve(tp.program, options)
        if not sol.optimal:
            break
        bf = _repair_precoders(tp.beamformers(sol, cfg.K, cfg.N), star, ch, cfg)
    return bf, check_feasibility(bf, star, ch, cfg).ok(FEAS_TOL), options.restore_iters


def initialize(ch: ChannelSet, cfg: SystemConfig, seed=0, options: SolveOptions | None = None,
               precoder: Callable | None = None):
    """Starting point: random phases, matched-filter precoders at equal power.

    Tries up to ``options.init_retries`` reseeded phase draws before running
    a feasibility-restoration pass on the last one. Returns
    ``(beamformers, star, alpha, info)``.
    """
    options = options or SolveOptions()
    precoder = precoder or matched_filter
    rng = np.random.default_rng(seed)
    ch.check(cfg)
    attempts = max(1, options.init_retries)
    for attempt in range(attempts):
        star = _initial_star(cfg, rng)
        bf = precoder(star, ch, cfg)
        bf, star = fit_amplification_budget(bf, star, ch, cfg)
        if check_feasibility(bf, star, ch, cfg).ok(FEAS_TOL):
            m = efficiency_metrics(bf, star, ch, cfg)
            return bf, star, update_alpha(m.se, m.p_tot), {"attempts": attempt + 1, "restored": False}
    bf, ok, its = _restore(bf, star, ch, cfg, options)
    if not ok:
        raise InitializationError("no initial point satisfies the minimum-rate constraints")
    m = efficiency_metrics(bf, star, ch, cfg)
    return bf, star, update_alpha(m.se, m.p_tot), {"attempts": attempts, "restored": True, "restore_iters": its}


# ---------------------------------------------------------------------------
# steps


def _repair_precoders(bf: Beamformers, star, ch, cfg, rel: float = 1e-6) -> Beamformers:
    """Undo solver-tolerance overshoot of the power budgets by uniform rescaling."""
    pb = p_bs(bf)
    if pb > cfg.p_bs_max:
        if pb > cfg.p_bs_max * (1 + rel) + 1e-12:
            raise SolveError(f"transmit step violates the BS budget: {pb} > {cfg.p_bs_max}")
        bf = bf.scaled(np.sqrt(cfg.p_bs_max / pb))
    if not cfg.passive:
        pa = p_act(bf, star, ch, cfg)
        if pa > cfg.p_ris_max:
            if pa > cfg.p_ris_max * (1 + rel) + 1e-12:
                raise SolveError(f"transmit step violates the STAR-RIS budget: {pa} > {cfg.p_ris_max}")
            noise = cfg.sigma_a2 * sum(float(np.sum(star.beta(s))) for s in SIDES)
            bf = bf.scaled(np.sqrt(max(cfg.p_ris_max - noise, 0.0) / max(pa - noise, 1e-300)) * (1 - 1e-12))
    return bf


def transmit_step(bf, star, ch, cfg, alpha, options) -> tuple[Beamformers, StepRecord]:
    state = SurrogateState.at(bf, star, ch, cfg, alpha)
    ops = derive(bf, star, ch, cfg)
    tp = build_transmit_subproblem(state, ops, star, ch, cfg)
    sol = _solve(tp.program, options)
    if not sol.optimal:
        raise SolveError(f"transmit subproblem: {sol.status}")
    new = _repair_precoders(tp.beamformers(sol, cfg.K, cfg.N), star, ch, cfg)
    return new, StepRecord("transmit", sol.status, objective_at(alpha, new, star, ch, cfg), relaxed=sol.objective)


def ris_step(bf, star, ch, cfg, alpha, options, seed) -> tuple[StarCoefficients, StepRecord]:
    state = SurrogateState.at(bf, star, ch, cfg, alpha)
    ops = derive(bf, star, ch, cfg)
    rp = build_ris_standard(state, ops, bf, ch, cfg)
    sol = _solve(rp.program, options)
    if not sol.optimal:
        raise SolveError(f"STAR-RIS subproblem: {sol.status}")
    rec = recover_rank_one(
        rp.lifted(sol), bf, ch, cfg, alpha,
        n_randomizations=options.n_randomizations, seed=seed, incumbent=star, state=state,
    )
    return rec.star, StepRecord(
        "ris", sol.status, rec.objective, relaxed=sol.objective, surrogate=rec.surrogate, source=rec.source
    )


TransmitStep = Callable[..., tuple[Beamformers, StepRecord]]


# ---------------------------------------------------------------------------
# driver


def ao_solve(
    ch: ChannelSet,
    cfg: SystemConfig,
    options: SolveOptions | None = None,
    transmit: TransmitStep | None = None,
    precoder: Callable | None = None,
    monotone_transmit: bool = True,
    optimize_ris: bool = True,
) -> SolveTrace:
    """Run the full alternating optimization and return its trace.

    ``transmit`` and ``precoder`` let baselines swap the precoder update and
    its initialization; ``monotone_transmit=False`` accepts transmit steps
    even if they lower the objective (needed when the precoder structure is
    re-derived from the surface each time).
    """
    options = options or SolveOptions()
    eps = cfg.epsilon if options.epsilon is None else options.epsilon
    inner_tol = cfg.inner_tol if options.inner_tol is None else options.inner_tol
    transmit = transmit or transmit_step
    started = time.perf_counter()
    trace = SolveTrace()
    ch.check(cfg)

    bf, star, alpha, info = initialize(ch, cfg, options.seed, options, precoder)
    trace.init_info = info
    trace.initial_re = efficiency_metrics(bf, star, ch, cfg).re
    step_seed = np.random.SeedSequence(options.seed).spawn(1)[0]
    ris_rng = np.random.default_rng(step_seed)

    def finish(converged: bool) -> SolveTrace:
        trace.beamformers, trace.star = bf, star
        trace.metrics = efficiency_metrics(bf, star, ch, cfg)
        trace.feasibility = check_feasibility(bf, star, ch, cfg)
        trace.converged = converged
        trace.wall_time = time.perf_counter() - started
        return trace

    converged = False
    for n in range(options.max_outer):
        it = OuterIteration(alpha=alpha)
        trace.outer.append(it)
        current = objective_at(alpha, bf, star, ch, cfg)
        it.inner_objectives.append(current)
        for _ in range(options.max_inner):
            previous = current
            try:
                new_bf, rec = transmit(bf, star, ch, cfg, alpha, options)
            except SolveError as exc:
                exc.trace = finish(False)
                raise
            report = check_feasibility(new_bf, star, ch, cfg)
            if report.ok(FEAS_TOL) and (
                not monotone_transmit or rec.objective >= current - ASCENT_SLACK * max(1.0, abs(current))
            ):
                bf, current = new_bf, rec.objective
                rec.status = "accepted"
                rec.min_slack = report.min_slack
            else:
                rec.status = "rejected"
                rec.min_slack = check_feasibility(bf, star, ch, cfg).min_slack
            it.steps.append(rec)

            if optimize_ris:
                try:
                    new_star, rec = ris_step(bf, star, ch, cfg, alpha, options, int(ris_rng.integers(2**63)))
                except SolveError as exc:
                    exc.trace = finish(False)
                    raise
                star, current = new_star, rec.objective
                rec.min_slack = check_feasibility(bf, star, ch, cfg).min_slack
                it.steps.append(rec)

            it.inner_objectives.append(current)
            if abs(current - previous) <= inner_tol * max(abs(previous), 1e-12):
                break

        m = efficiency_metrics(bf, star, ch, cfg)
        it.re, it.se, it.p_tot = m.re, m.se, m.p_tot
        it.next_alpha = update_alpha(m.se, m.p_tot)
        if options.verbose:
            log.info("outer %d: alpha=%.6g -> %.6g, RE=%.6g, inner=%d",
                     n, alpha, it.next_alpha, m.re, len(it.inner_objectives) - 1)
        done = abs(it.next_alpha - alpha) <= eps
        alpha = it.next_alpha
        if done:
            converged = True
            break
    return finish(converged)
