"""Comparison schemes built on the same model and solver: passive STAR-RIS,
zero-forcing precoding, ideal hardware and imperfect-CSI evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import apply_csi_error
from .model import (
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
)
from .optimizer.ao import (
    FEAS_TOL,
    SolveError,
    SolveOptions,
    SolveTrace,
    StepRecord,
    _repair_precoders,
    _solve,
    ao_solve,
    fit_amplification_budget,
    objective_at,
)
from .optimizer.operators import derive
from .optimizer.surrogate import SurrogateState
from .optimizer.transmit import build_transmit_subproblem

log = logging.getLogger(__name__)

SCHEMES = ("proposed", "passive_star", "zf", "ideal_hw", "csi_random", "csi_worst")


@dataclass(frozen=True)
class SchemeSpec:
    """One comparison scheme plus the overrides it is allowed to carry."""

    scheme: str = "proposed"
    kappa_b: float | None = None
    kappa_u: float | None = None
    rho_c_max: float = 1e-2
    zf_optimize_ris: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.scheme == "ideal_hw" and (self.kappa_b not in (None, 0.0) or self.kappa_u not in (None, 0.0)):
            raise ValueError("ideal_hw fixes both impairment levels to zero")
        if self.rho_c_max < 0:
            raise ValueError("rho_c_max must be non-negative")

    def configure(self, cfg: SystemConfig) -> SystemConfig:
        """The system configuration this scheme optimizes with."""
        updates = {}
        if self.kappa_b is not None:
            updates["kappa_b"] = self.kappa_b
        if self.kappa_u is not None:
            updates["kappa_u"] = self.kappa_u
        if self.scheme == "ideal_hw":
            updates.update(kappa_b=0.0, kappa_u=0.0)
        if self.scheme == "passive_star":
            updates["passive"] = True
        return cfg.with_updates(**updates) if updates else cfg


@dataclass
class SchemeResult:
    """Outcome of one scheme on one channel realization.

    ``metrics`` and ``feasibility`` are always computed on the channels the
    scheme is judged on (the true ones for the CSI-error schemes).
    """

    scheme: str
    trace: SolveTrace
    metrics: MetricsReport
    feasibility: FeasibilityReport
    beamformers: Beamformers
    star: StarCoefficients
    cfg: SystemConfig
    notes: dict = field(default_factory=dict)


def _result(scheme, trace, cfg, ch, notes=None) -> SchemeResult:
    bf, star = trace.beamformers, trace.star
    return SchemeResult(
        scheme=scheme,
        trace=trace,
        metrics=efficiency_metrics(bf, star, ch, cfg),
        feasibility=check_feasibility(bf, star, ch, cfg),
        beamformers=bf,
        star=star,
        cfg=cfg,
        notes=notes or {},
    )


def run_proposed(ch: ChannelSet, cfg: SystemConfig, options: SolveOptions | None = None) -> SchemeResult:
    return _result("proposed", ao_solve(ch, cfg, options), cfg, ch)


def run_passive_star(ch: ChannelSet, cfg: SystemConfig, options: SolveOptions | None = None) -> SchemeResult:
    """Energy-splitting passive surface: ``beta_t + beta_r <= 1``, no amplifier noise or power."""
    cfg = SchemeSpec("passive_star").configure(cfg)
    return _result("passive_star", ao_solve(ch, cfg, options), cfg, ch)


def run_ideal_hw(ch: ChannelSet, cfg: SystemConfig, options: SolveOptions | None = None) -> SchemeResult:
    cfg = SchemeSpec("ideal_hw").configure(cfg)
    return _result("ideal_hw", ao_solve(ch, cfg, options), cfg, ch)


# ---------------------------------------------------------------------------
# zero forcing


def zf_directions(star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig, cond_max: float = 1e12) -> np.ndarray:
    """Unit-norm columns of ``H (H^H H)^-1`` for the stacked cascaded channels."""
    if cfg.K > cfg.N:
        raise ValueError("zero forcing needs K <= N")
    H = cascaded_channels(star, ch, cfg).T  # N x K, column k is H_k
    gram = H.conj().T @ H
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > cond_max:
        raise SolveError("cascaded channel matrix is rank deficient")
    W = H @ np.linalg.inv(gram)
    return (W / np.linalg.norm(W, axis=0, keepdims=True)).T


def zf_precoder(star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig) -> Beamformers:
    """Equal-power ZF start point."""
    return Beamformers(zf_directions(star, ch, cfg) * np.sqrt(cfg.p_bs_max / cfg.K))


def _zf_anchor(bf, d, star, ch, cfg) -> Beamformers:
    """Current per-user powers moved onto the ZF directions ``d``, shrunk if
    the amplification budget no longer holds."""
    bf = Beamformers(np.linalg.norm(bf.w, axis=1)[:, None] * d)
    if not cfg.passive:
        pa = p_act(bf, star, ch, cfg)
        if pa > cfg.p_ris_max:
            noise = cfg.sigma_a2 * sum(float(np.sum(star.beta(s))) for s in SIDES)
            bf = bf.scaled(np.sqrt(max(cfg.p_ris_max - noise, 0.0) / max(pa - noise, 1e-300)) * (1 - 1e-9))
    return bf


def _zf_solve(bf, d, star, ch, cfg, alpha, options, restore):
    state = SurrogateState.at(bf, star, ch, cfg, alpha)
    ops = derive(bf, star, ch, cfg)
    tp = build_transmit_subproblem(state, ops, star, ch, cfg, restore=restore, directions=d)
    sol = _solve(tp.program, options)
    if not sol.optimal:
        raise SolveError(f"ZF power allocation: {sol.status}")
    new = tp.beamformers(sol, cfg.K, cfg.N)
    # snap onto the exact directions so nulling holds to machine precision
    amp = np.real(np.sum(np.conj(d) * new.w, axis=1))
    return _repair_precoders(Beamformers(amp[:, None] * d), star, ch, cfg), sol


def zf_transmit_step(bf, star, ch, cfg, alpha, options) -> tuple[Beamformers, StepRecord]:
    """Power allocation along ZF directions recomputed for the current surface.

    The surrogate is anchored at a ZF point; if that point misses a minimum
    rate, restoration steps along the same directions come first.
    """
    d = zf_directions(star, ch, cfg)
    bf = _zf_anchor(bf, d, star, ch, cfg)
    for _ in range(options.restore_iters):
        if check_feasibility(bf, star, ch, cfg).ok(FEAS_TOL):
            break
        bf, _ = _zf_solve(bf, d, star, ch, cfg, alpha, options, restore=True)
    else:
        if not check_feasibility(bf, star, ch, cfg).ok(FEAS_TOL):
            raise SolveError("ZF power allocation: minimum rates unreachable along ZF directions")
    new, sol = _zf_solve(bf, d, star, ch, cfg, alpha, options, restore=False)
    return new, StepRecord("transmit", sol.status, objective_at(alpha, new, star, ch, cfg), relaxed=sol.objective)


def run_zf(ch: ChannelSet, cfg: SystemConfig, options: SolveOptions | None = None,
           optimize_ris: bool = True) -> SchemeResult:
    """ZF precoding with optimized per-user powers; the surface is still optimized
    unless ``optimize_ris`` is False.

    ZF directions depend on the surface, so every transmit step is accepted
    (a surface update moves the directions) and one final power allocation
    is run so the returned precoders are exactly ZF for the returned surface.
    """
    options = options or SolveOptions()

    trace = ao_solve(ch, cfg, options, transmit=zf_transmit_step, precoder=zf_precoder,
                     monotone_transmit=False, optimize_ris=optimize_ris)
    bf, star = trace.beamformers, trace.star
    alpha = trace.alpha_history[-1]
    notes = {}
    try:
        final, rec = zf_transmit_step(bf, star, ch, cfg, alpha, options)
        if check_feasibility(final, star, ch, cfg).ok(FEAS_TOL):
            bf = final
            notes["final_power_step"] = "accepted"
        else:
            notes["final_power_step"] = "infeasible"
    except SolveError as exc:
        notes["final_power_step"] = f"failed: {exc}"
    if notes["final_power_step"] != "accepted":
        # fall back to rescaled ZF directions keeping each user's power
        d = zf_directions(star, ch, cfg)
        bf = Beamformers(np.linalg.norm(bf.w, axis=1)[:, None] * d)
        bf, star = fit_amplification_budget(bf, star, ch, cfg, margin=1.0)
    trace.beamformers, trace.star = bf, star
    trace.metrics = efficiency_metrics(bf, star, ch, cfg)
    trace.feasibility = check_feasibility(bf, star, ch, cfg)
    return _result("zf", trace, cfg, ch, notes)


# ---------------------------------------------------------------------------
# imperfect CSI


def run_csi_error(ch: ChannelSet, cfg: SystemConfig, mode: str, options: SolveOptions | None = None,
                  rho_c_max: float = 1e-2, seed=0) -> SchemeResult:
    """Optimize on perturbed channels, judge the design on the true ones.

    Minimum-rate violations on the true channels are expected and only
    recorded (``notes["rate_violations"]``).
    """
    estimate = apply_csi_error(ch, mode, rho_c_max, seed)
    trace = ao_solve(estimate, cfg, options)
    scheme = "csi_random" if mode == "random" else "csi_worst"
    res = _result(scheme, trace, cfg, ch)
    violations = [k for k, s in enumerate(res.feasibility.rate_slack) if s < -FEAS_TOL]
    res.notes.update(
        mode=mode,
        rho_c_max=rho_c_max,
        designed_re=trace.metrics.re,
        rate_violations=violations,
        feasible_on_estimate=trace.feasibility.ok(FEAS_TOL),
    )
    if violations:
        log.info("%s: minimum rate missed on true channels by users %s", scheme, violations)
    return res


def run_scheme(spec: SchemeSpec | str, ch: ChannelSet, cfg: SystemConfig, options: SolveOptions | None = None,
               csi_seed=0) -> SchemeResult:
    """Dispatch on ``spec.scheme``; overrides are applied first."""
    spec = SchemeSpec(spec) if isinstance(spec, str) else spec
    base = spec.configure(cfg)
    if spec.scheme == "proposed":
        return run_proposed(ch, base, options)
    if spec.scheme == "passive_star":
        return run_passive_star(ch, base, options)
    if spec.scheme == "ideal_hw":
        return run_ideal_hw(ch, base, options)
    if spec.scheme == "zf":
        return run_zf(ch, base, options, optimize_ris=spec.zf_optimize_ris)
    mode = "random" if spec.scheme == "csi_random" else "worst_case"
    return run_csi_error(ch, base, mode, options, rho_c_max=spec.rho_c_max, seed=csi_seed)
