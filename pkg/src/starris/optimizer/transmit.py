"""Transmit-beamforming step: convex surrogate in the precoders for a fixed
STAR-RIS configuration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import conic
from ..conic import Affine, ConicProgram, vstack
from ..model import SIDES, Beamformers, ChannelSet, StarCoefficients, SystemConfig
from .operators import DerivedOperators, gamma_factor
from .surrogate import FLOOR, SurrogateState


def realify(B: np.ndarray) -> np.ndarray:
    """Real matrix mapping ``[Re w; Im w]`` to ``[Re Bw; Im Bw]``."""
    B = np.atleast_2d(B)
    return np.block([[B.real, -B.imag], [B.imag, B.real]])


@dataclass
class TransmitProgram:
    program: ConicProgram
    w: Affine
    x_hat: Affine
    y_hat: Affine
    restore: bool
    objective_offset: float

    def beamformers(self, sol: conic.ConicSolution, K: int, N: int) -> Beamformers:
        v = sol.value(self.w).reshape(K, 2 * N)
        return Beamformers(v[:, :N] + 1j * v[:, N:])


def _static_power(star: StarCoefficients, cfg: SystemConfig) -> float:
    """Power terms that do not depend on the precoders."""
    ris_noise = 0.0 if cfg.passive else cfg.sigma_a2 * sum(float(np.sum(star.beta(s))) for s in SIDES)
    return ris_noise / cfg.xi + cfg.M * cfg.p_r + cfg.p_c


def build_transmit_subproblem(
    state: SurrogateState,
    ops: DerivedOperators,
    star: StarCoefficients,
    ch: ChannelSet,
    cfg: SystemConfig,
    restore: bool = False,
    directions: np.ndarray | None = None,
) -> TransmitProgram:
    """Assemble the precoder surrogate around ``state``.

    Rate slacks are normalized by their anchors (``x_hat = X / X0``,
    ``y_hat = Y / Y0``) so every coefficient is O(1) regardless of the
    absolute received-power scale.

    With ``restore=True`` the program maximizes the smallest rate lower
    bound instead and drops the minimum-rate requirement.

    ``directions`` (``K x N``) pins each precoder to a real multiple of the
    given direction, leaving only per-user amplitudes free.
    """
    K, N = cfg.K, cfg.N
    H = ops.H
    p = ConicProgram("restore" if restore else "transmit")
    w = p.variable("w", K * 2 * N)
    x_hat = p.variable("x_hat", K)
    y_hat = p.variable("y_hat", K)
    wk = [w[np.arange(k * 2 * N, (k + 1) * 2 * N)] for k in range(K)]
    if directions is not None:
        amp = p.variable("amplitude", K)
        for k in range(K):
            d = np.concatenate([directions[k].real, directions[k].imag])
            p.add_eq(wk[k] - amp[k].repeat(2 * N) * d, f"direction[{k}]")

    bounds = state.bounds()
    rlb = [
        Affine.constant([b.constant]) + (x_hat[k] - 1.0) * b.slope_normalized + (y_hat[k] - 1.0) * b.slope_normalized
        for k, b in enumerate(bounds)
    ]
    p.add_nonneg(x_hat - FLOOR, "x_floor")
    p.add_nonneg(y_hat - FLOOR, "y_floor")

    # 1/X_k <= Pi_k, written as x_hat_k * (X0_k Pi_k) >= 1
    for k in range(K):
        a = np.vdot(H[k], state.w[k])
        lin = realify(np.conj(a) * np.conj(H[k])[None, :])[0]  # Re(conj(a) H_k^H w)
        pi_scaled = wk[k].dot(2 * lin * state.x0[k]) - np.abs(a) ** 2 * state.x0[k]
        p.add_rsoc(x_hat[k], pi_scaled, Affine.constant([1.0]), f"signal[{k}]")

    # Y_k upper-bounds interference + distortion + noise
    sigma_a2 = 0.0 if cfg.passive else cfg.sigma_a2
    ris_gain = np.array([np.sum(np.abs(ch.h[k]) ** 2 * star.beta(cfg.side_of(k))) for k in range(K)])
    for k in range(K):
        noise = (1 + cfg.kappa_u) * (ris_gain[k] * sigma_a2 + cfg.sigma2)
        scale = 1.0 / np.sqrt(state.y0[k])
        parts = []
        hk = np.conj(H[k])[None, :]
        per_antenna = np.sqrt((1 + cfg.kappa_u) * cfg.kappa_b) * np.diag(np.abs(H[k]))
        for l in range(K):
            coef = np.sqrt(cfg.kappa_u) if l == k else np.sqrt(1 + cfg.kappa_u)
            B = np.vstack([coef * hk, per_antenna])
            parts.append(wk[l].left(realify(B) * scale))
        p.add_rsoc(y_hat[k] - noise / state.y0[k], Affine.constant([1.0]), vstack(*parts), f"interference[{k}]")

    # BS power budget
    p.add_soc(Affine.constant([np.sqrt(cfg.p_bs_max)]), w, "bs_power")

    # STAR-RIS amplification budget
    static = _static_power(star, cfg)
    if not cfg.passive:
        B = gamma_factor(star, ch, cfg)
        room = cfg.p_ris_max - cfg.sigma_a2 * sum(float(np.sum(star.beta(s))) for s in SIDES)
        if room < 0:
            room = 0.0
        RB = realify(B)
        p.add_soc(Affine.constant([np.sqrt(room)]), vstack(*[wk[k].left(RB) for k in range(K)]), "ris_power")

    if restore:
        s = p.variable("s")
        for k in range(K):
            p.add_le(s, rlb[k], f"rate_slack[{k}]")
        p.maximize(s)
        return TransmitProgram(p, w, x_hat, y_hat, True, 0.0)

    alpha = state.alpha
    y = p.variable("y")
    t = p.variable("t")
    q = p.variable("q")
    p.add_le(y, sum(rlb[1:], rlb[0]), "sum_rate")
    for k in range(K):
        p.add_le(Affine.constant([cfg.r_min]), rlb[k], f"min_rate[{k}]")
    p.add_rsoc(y, Affine.constant([1.0]), t, "sqrt_hypograph")
    # q >= sum_k w_k^H (I + Gamma) w_k  (BS power plus precoder-dependent amplification power)
    B = np.vstack([np.eye(N), gamma_factor(star, ch, cfg)])
    RB = realify(B)
    p.add_rsoc(q, Affine.constant([1.0]), vstack(*[wk[k].left(RB) for k in range(K)]), "power_epigraph")
    offset = -alpha**2 * static
    p.maximize(t * (2 * alpha) - q * (alpha**2 / cfg.xi) + y * (cfg.omega / cfg.p_max) + offset)
    return TransmitProgram(p, w, x_hat, y_hat, False, offset)
