"""STAR-RIS configuration step: semidefinite relaxation of the lifted
coefficients followed by rank-one recovery."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import conic
from ..conic import Affine, ConicProgram, HermitianVariable
from ..model import (
    SIDES,
    Beamformers,
    ChannelSet,
    StarCoefficients,
    SystemConfig,
    interference_noise_powers,
    p_act,
    p_bs,
    p_tot,
    signal_powers,
)
from .operators import DerivedOperators
from .surrogate import FLOOR, SurrogateState, qt_objective


@dataclass
class RisProgram:
    program: ConicProgram
    U: dict[str, HermitianVariable]
    x_hat: Affine
    y_hat: Affine
    state: SurrogateState

    def lifted(self, sol: conic.ConicSolution) -> dict[str, np.ndarray]:
        out = {}
        for s, var in self.U.items():
            U = sol.value(var)
            out[s] = 0.5 * (U + U.conj().T)
        return out


def signal_operators(ops: DerivedOperators, bf: Beamformers) -> np.ndarray:
    """``a[k, l] = D_k w_l`` so that ``Tr(U D_k W_l D_k^H) = a^H U a``."""
    return np.einsum("kmn,ln->klm", ops.D, bf.w)


def build_ris_subproblem(
    state: SurrogateState,
    ops: DerivedOperators,
    bf: Beamformers,
    ch: ChannelSet,
    cfg: SystemConfig,
) -> RisProgram:
    K, M = cfg.K, cfg.M
    p = ConicProgram("ris")
    U = {s: p.hermitian(f"U_{s}", M) for s in SIDES}
    x_hat = p.variable("x_hat", K)
    y_hat = p.variable("y_hat", K)
    yp = p.variable("y_prime")
    t = p.variable("t")
    for s in SIDES:
        p.add_hermitian_psd(U[s], f"psd_{s}")

    if cfg.passive:
        p.add_le(U["t"].diag() + U["r"].diag(), np.ones(M), "energy_split")
    else:
        for s in SIDES:
            p.add_le(U[s].diag(), np.full(M, cfg.rho_max), f"gain_{s}")
        ups = np.real(np.diag(ops.Upsilon))
        p.add_le(U["t"].diag().dot(ups) + U["r"].diag().dot(ups), cfg.p_ris_max, "ris_power")

    p.add_nonneg(x_hat - FLOOR, "x_floor")
    p.add_nonneg(y_hat - FLOOR, "y_floor")

    a = signal_operators(ops, bf)
    sigma_a2 = 0.0 if cfg.passive else cfg.sigma_a2
    bounds = state.bounds()
    rlb = []
    for k in range(K):
        Us = U[cfg.side_of(k)]
        sig = np.outer(a[k, k], np.conj(a[k, k]))
        p.add_rsoc(x_hat[k], Us.trace_with(sig * state.x0[k]), Affine.constant([1.0]), f"signal[{k}]")
        Z = ops.E[k] + (1 + cfg.kappa_u) * sigma_a2 * np.diag(ops.Q_tilde_diag[k])
        for i in range(K):
            if i != k:
                Z = Z + np.outer(a[k, i], np.conj(a[k, i]))
        noise = (1 + cfg.kappa_u) * cfg.sigma2
        p.add_le(Us.trace_with(Z / state.y0[k]) + noise / state.y0[k], y_hat[k], f"interference[{k}]")
        b = bounds[k]
        rlb.append(Affine.constant([b.constant]) + (x_hat[k] - 1.0) * b.slope_normalized + (y_hat[k] - 1.0) * b.slope_normalized)
        p.add_le(Affine.constant([cfg.r_min]), rlb[k], f"min_rate[{k}]")

    p.add_le(yp, sum(rlb[1:], rlb[0]), "sum_rate")
    p.add_rsoc(yp, Affine.constant([1.0]), t, "sqrt_hypograph")

    alpha = state.alpha
    p_bs = float(np.sum(np.abs(bf.w) ** 2))
    static = p_bs / cfg.xi + cfg.M * cfg.p_r + cfg.p_c
    objective = t * (2 * alpha) + yp * (cfg.omega / cfg.p_max) - alpha**2 * static
    if not cfg.passive:
        ups = np.real(np.diag(ops.Upsilon))
        objective = objective - (U["t"].diag().dot(ups) + U["r"].diag().dot(ups)) * (alpha**2 / cfg.xi)
    p.maximize(objective)
    return RisProgram(p, U, x_hat, y_hat, state)


# ---------------------------------------------------------------------------
# rank-one recovery


def surrogate_value(
    state: SurrogateState, bf: Beamformers, star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig
) -> float:
    """Relaxed-program objective at the rank-one point ``star`` with tight slacks."""
    sig = signal_powers(bf, star, ch, cfg)
    den = interference_noise_powers(bf, star, ch, cfg)
    return _surrogate(state, sig, den, p_tot(bf, star, ch, cfg), cfg)


def _surrogate(state, sig, den, total_power, cfg) -> float:
    sig = np.maximum(sig, 1e-300)
    lb = sum(float(b(1.0 / sig[k], den[k])) for k, b in enumerate(state.bounds()))
    a = state.alpha
    return float(2 * a * np.sqrt(max(lb, 0.0)) - a**2 * total_power + cfg.omega * lb / cfg.p_max)


def project_feasible(star: StarCoefficients, bf: Beamformers, ch: ChannelSet, cfg: SystemConfig) -> StarCoefficients:
    """Clip element gains, then shrink uniformly until the amplification budget holds."""
    u_t, u_r = np.array(star.u_t), np.array(star.u_r)
    if cfg.passive:
        tot = np.abs(u_t) ** 2 + np.abs(u_r) ** 2
        f = np.where(tot > 1.0, 1.0 / np.sqrt(np.maximum(tot, 1e-300)), 1.0)
        return StarCoefficients(u_t * f, u_r * f)
    cap = np.sqrt(cfg.rho_max)
    for u in (u_t, u_r):
        mag = np.abs(u)
        over = mag > cap
        u[over] *= cap / mag[over]
    out = StarCoefficients(u_t, u_r)
    pa = p_act(bf, out, ch, cfg)
    if pa > cfg.p_ris_max:
        out = out.scaled(np.sqrt(cfg.p_ris_max / pa) * (1 - 1e-12))
    return out


@dataclass
class Recovery:
    star: StarCoefficients
    objective: float  # true quadratic-transform objective
    surrogate: float  # relaxed-program objective at the recovered point
    feasible: bool
    source: str
    candidates: int
    evaluated: list = field(default_factory=list, repr=False)


def recover_rank_one(
    U: dict[str, np.ndarray],
    bf: Beamformers,
    ch: ChannelSet,
    cfg: SystemConfig,
    alpha: float,
    n_randomizations: int = 50,
    seed=0,
    incumbent: StarCoefficients | None = None,
    state: SurrogateState | None = None,
    feas_tol: float = 1e-9,
) -> Recovery:
    """Pick a rank-one STAR-RIS configuration from relaxed lifted matrices.

    Candidates: the scaled principal eigenvectors, then Gaussian
    randomizations with covariance ``U_s``; every candidate is projected onto
    the element-gain and amplification-power constraints. ``incumbent`` (if
    given) competes as one more candidate.

    With ``state`` the feasible candidate scoring highest in the relaxed
    program wins. That score is tight at the incumbent and never exceeds the
    true objective, so the true objective cannot drop, and the relaxed
    optimum bounds the winner's score. Without ``state`` candidates are
    ranked by the true objective directly.
    """
    rng = np.random.default_rng(seed)
    factors = {}
    principal = {}
    for s in SIDES:
        Us = 0.5 * (U[s] + U[s].conj().T)
        lam, V = np.linalg.eigh(Us)
        lam = np.clip(lam, 0.0, None)
        factors[s] = V * np.sqrt(lam)
        principal[s] = np.sqrt(lam[-1]) * V[:, -1]

    cands = [("principal", StarCoefficients(np.conj(principal["t"]), np.conj(principal["r"])))]
    M = U["t"].shape[0]
    for _ in range(n_randomizations):
        v = {}
        for s in SIDES:
            z = (rng.standard_normal(M) + 1j * rng.standard_normal(M)) / np.sqrt(2)
            v[s] = factors[s] @ z
        cands.append(("randomized", StarCoefficients(np.conj(v["t"]), np.conj(v["r"]))))

    evaluated = []
    for source, raw in cands:
        star = project_feasible(raw, bf, ch, cfg)
        evaluated.append(_score(source, star, bf, ch, cfg, alpha, feas_tol, state))
    if incumbent is not None:
        evaluated.append(_score("incumbent", incumbent, bf, ch, cfg, alpha, feas_tol, state))
    rank = (lambda c: c.surrogate) if state is not None else (lambda c: c.objective)
    feasible = [c for c in evaluated if c.feasible]
    chosen = max(feasible or evaluated, key=rank)
    return Recovery(chosen.star, chosen.objective, chosen.surrogate, chosen.feasible, chosen.source,
                    len(evaluated), evaluated)


@dataclass(frozen=True)
class Candidate:
    source: str
    star: StarCoefficients
    objective: float
    surrogate: float
    feasible: bool


def _score(source, star, bf, ch, cfg, alpha, feas_tol, state) -> Candidate:
    sig = signal_powers(bf, star, ch, cfg)
    den = interference_noise_powers(bf, star, ch, cfg)
    r = np.log2(1.0 + sig / den)
    se = float(np.sum(r))
    pa = p_act(bf, star, ch, cfg)
    total = (p_bs(bf) + pa) / cfg.xi + cfg.M * cfg.p_r + cfg.p_c
    if cfg.passive:
        amp_ok = np.all(star.beta("t") + star.beta("r") <= 1.0 + feas_tol)
    else:
        amp_ok = np.all(np.concatenate([star.beta("t"), star.beta("r")]) <= cfg.rho_max + feas_tol)
        amp_ok = amp_ok and pa <= cfg.p_ris_max + feas_tol
    feas = bool(amp_ok and p_bs(bf) <= cfg.p_bs_max + feas_tol and np.all(r >= cfg.r_min - feas_tol))
    sur = _surrogate(state, sig, den, total, cfg) if state is not None else float("nan")
    return Candidate(source, star, qt_objective(alpha, se, total, cfg), sur, feas)


@dataclass
class RisStandardProgram:
    program: conic.StandardProgram
    U: dict[str, conic.HermitianBlock]
    x_hat: list
    y_hat: list
    state: SurrogateState

    def lifted(self, sol: conic.ConicSolution) -> dict[str, np.ndarray]:
        return {s: blk.value(sol.x) for s, blk in self.U.items()}


def build_ris_standard(
    state: SurrogateState,
    ops: DerivedOperators,
    bf: Beamformers,
    ch: ChannelSet,
    cfg: SystemConfig,
) -> RisStandardProgram:
    """Same relaxation as :func:`build_ris_subproblem`, in cone-variable form.

    Every scalar is tied to a cone block by an equality; the interference
    slack is substituted by its (tight) upper bound and the floors on the
    slacks are implied by the rotated cones.
    """
    K, M = cfg.K, cfg.M
    p = conic.StandardProgram("ris")
    U = {s: p.hermitian_psd(f"U_{s}", M) for s in SIDES}
    # allocate every block before building expressions so widths agree
    if cfg.passive:
        e_split = p.nonneg("energy_split", M)
    else:
        gains = {s: p.nonneg(f"gain_{s}", M) for s in SIDES}
        ris_room = p.nonneg("ris_power")
    sig = [p.rsoc(f"signal[{k}]") for k in range(K)]
    rate_room = p.nonneg("min_rate", K)
    sum_room = p.nonneg("sum_rate")
    hyp = p.rsoc("sqrt_hypograph")
    n = p.n

    diag = {s: U[s].diag(n) for s in SIDES}
    if cfg.passive:
        p.add_eq(diag["t"] + diag["r"] + e_split - 1.0, "energy_split")
    else:
        ups = np.real(np.diag(ops.Upsilon))
        for s in SIDES:
            p.add_eq(diag[s] + gains[s] - cfg.rho_max, f"gain_{s}")
        p.add_eq(diag["t"].dot(ups) + diag["r"].dot(ups) + ris_room - cfg.p_ris_max, "ris_power")

    a = signal_operators(ops, bf)
    sigma_a2 = 0.0 if cfg.passive else cfg.sigma_a2
    noise = (1 + cfg.kappa_u) * cfg.sigma2
    x_hat, y_hat, rlb = [], [], []
    for k, b in enumerate(state.bounds()):
        Us = U[cfg.side_of(k)]
        xk, vk, zk = sig[k]
        p.add_eq(vk - Us.trace_with(np.outer(a[k, k], np.conj(a[k, k])) * state.x0[k], n), f"signal_gain[{k}]")
        p.add_eq(zk - 1.0, f"signal_unit[{k}]")
        Z = ops.E[k] + (1 + cfg.kappa_u) * sigma_a2 * np.diag(ops.Q_tilde_diag[k])
        for i in range(K):
            if i != k:
                Z = Z + np.outer(a[k, i], np.conj(a[k, i]))
        yk = Us.trace_with(Z / state.y0[k], n) + noise / state.y0[k]
        r = (xk - 1.0) * b.slope_normalized + (yk - 1.0) * b.slope_normalized + b.constant
        x_hat.append(xk)
        y_hat.append(yk)
        rlb.append(r)
        p.add_eq(r - cfg.r_min - rate_room[k], f"min_rate[{k}]")

    yp, one, t = hyp
    p.add_eq(one - 1.0, "hypograph_unit")
    p.add_eq(yp + sum_room - sum(rlb[1:], rlb[0]), "sum_rate")

    alpha = state.alpha
    p_bs = float(np.sum(np.abs(bf.w) ** 2))
    static = p_bs / cfg.xi + cfg.M * cfg.p_r + cfg.p_c
    objective = t * (2 * alpha) + yp * (cfg.omega / cfg.p_max) - alpha**2 * static
    if not cfg.passive:
        objective = objective - (diag["t"].dot(ups) + diag["r"].dot(ups)) * (alpha**2 / cfg.xi)
    p.maximize(objective)
    return RisStandardProgram(p, U, x_hat, y_hat, state)
