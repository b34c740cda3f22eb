"""Matrices that re-express the SINR and amplification power as quadratic
forms in the precoders (for the transmit step) or in the lifted STAR-RIS
coefficients (for the surface step)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import (
    SIDES,
    Beamformers,
    ChannelSet,
    StarCoefficients,
    SystemConfig,
    cascaded_channels,
    tilde_diag,
)


def _herm(A):
    return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))


@dataclass(frozen=True)
class DerivedOperators:
    H: np.ndarray  # (K, N) cascaded channels
    C: np.ndarray  # (K, N, N)
    Q_diag: np.ndarray  # (K, M) diagonal of Q_k = diag(h_k^H)
    D: np.ndarray  # (K, M, N)
    E: np.ndarray  # (K, M, M)
    Gamma: np.ndarray  # (N, N)
    Upsilon: np.ndarray  # (M, M), diagonal

    @property
    def Q_tilde_diag(self) -> np.ndarray:
        return np.abs(self.Q_diag) ** 2


def gamma_matrix(star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig) -> np.ndarray:
    """Amplification-power quadratic form in each precoder (zero when passive)."""
    N = ch.N
    if cfg.passive:
        return np.zeros((N, N), complex)
    out = np.zeros((N, N), complex)
    for s in SIDES:
        TG = star.side(s)[:, None] * ch.G
        A = TG.conj().T @ TG
        out += A + cfg.kappa_b * tilde_diag(A)
    return _herm(out)


def gamma_factor(star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig) -> np.ndarray:
    """``B`` with ``B^H B == gamma_matrix(...)``, built without a factorization."""
    if cfg.passive:
        return np.zeros((0, ch.N), complex)
    rows = []
    for s in SIDES:
        TG = star.side(s)[:, None] * ch.G
        rows.append(TG)
        rows.append(np.sqrt(cfg.kappa_b) * np.diag(np.linalg.norm(TG, axis=0)))
    return np.vstack(rows)


def upsilon_matrix(bf: Beamformers, ch: ChannelSet, cfg: SystemConfig) -> np.ndarray:
    """Diagonal amplification-power weights per element (same for both sides)."""
    M = ch.M
    if cfg.passive:
        return np.zeros((M, M))
    Gw = bf.w @ ch.G.T
    incident = np.sum(np.abs(Gw) ** 2, axis=0)
    distortion = cfg.kappa_b * (np.abs(ch.G) ** 2 @ np.sum(np.abs(bf.w) ** 2, axis=0))
    return np.diag(incident + distortion + cfg.sigma_a2)


def c_matrices(H: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    outer = H[:, :, None] * np.conj(H)[:, None, :]
    diag = np.zeros_like(outer)
    idx = np.arange(H.shape[1])
    diag[:, idx, idx] = np.abs(H) ** 2
    return cfg.kappa_u * outer + (1 + cfg.kappa_u) * cfg.kappa_b * diag


def d_matrices(ch: ChannelSet) -> np.ndarray:
    """``D_k = diag(h_k^H) G`` for every user."""
    return np.conj(ch.h)[:, :, None] * ch.G[None, :, :]


def e_matrices(D: np.ndarray, bf: Beamformers, cfg: SystemConfig) -> np.ndarray:
    Dw = np.einsum("kmn,ln->klm", D, bf.w)  # D_k w_l
    E = cfg.kappa_u * np.einsum("klm,klp->kmp", Dw, np.conj(Dw))
    antenna_power = np.sum(np.abs(bf.w) ** 2, axis=0)
    E = E + (1 + cfg.kappa_u) * cfg.kappa_b * np.einsum("kmn,n,kpn->kmp", D, antenna_power, np.conj(D))
    return _herm(E)


def derive(bf: Beamformers, star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig) -> DerivedOperators:
    H = cascaded_channels(star, ch, cfg)
    D = d_matrices(ch)
    return DerivedOperators(
        H=H,
        C=c_matrices(H, cfg),
        Q_diag=np.conj(ch.h),
        D=D,
        E=e_matrices(D, bf, cfg),
        Gamma=gamma_matrix(star, ch, cfg),
        Upsilon=upsilon_matrix(bf, ch, cfg),
    )


def lift(star: StarCoefficients) -> dict[str, np.ndarray]:
    """``U_s = v_s v_s^H`` with ``v_s = conj(coefficients)``."""
    out = {}
    for s in SIDES:
        v = np.conj(star.side(s))
        out[s] = np.outer(v, np.conj(v))
    return out


# ---------------------------------------------------------------------------
# alternative closed forms, used as cross-checks


def sinr_c_form(bf: Beamformers, star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig) -> np.ndarray:
    H = cascaded_channels(star, ch, cfg)
    C = c_matrices(H, cfg)
    w = bf.w
    gains = np.abs(np.conj(H) @ w.T) ** 2
    quad = np.einsum("ln,knp,lp->k", np.conj(w), C, w).real
    u = np.stack([star.side(s) for s in cfg.user_sides])
    ris_gain = np.sum(np.abs(ch.h) ** 2 * np.abs(u) ** 2, axis=1)
    sigma_a2 = 0.0 if cfg.passive else cfg.sigma_a2
    den = gains.sum(axis=1) - np.diag(gains) + quad + (1 + cfg.kappa_u) * (ris_gain * sigma_a2 + cfg.sigma2)
    return np.diag(gains) / den


def sinr_lifted(bf: Beamformers, star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig) -> np.ndarray:
    U = lift(star)
    D = d_matrices(ch)
    E = e_matrices(D, bf, cfg)
    sigma_a2 = 0.0 if cfg.passive else cfg.sigma_a2
    out = np.empty(cfg.K)
    for k in range(cfg.K):
        Us = U[cfg.side_of(k)]
        Dw = D[k] @ bf.w.T  # columns D_k w_l
        traces = np.einsum("ml,mp,pl->l", np.conj(Dw), Us, Dw).real  # Tr(U D W_l D^H)
        q = np.trace(np.diag(np.abs(ch.h[k]) ** 2) @ Us).real
        den = traces.sum() - traces[k] + np.trace(E[k] @ Us).real + (1 + cfg.kappa_u) * (q * sigma_a2 + cfg.sigma2)
        out[k] = traces[k] / den
    return out


def p_act_gamma(bf: Beamformers, star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig) -> float:
    if cfg.passive:
        return 0.0
    Gam = gamma_matrix(star, ch, cfg)
    quad = np.einsum("kn,np,kp->", np.conj(bf.w), Gam, bf.w).real
    return float(quad + cfg.sigma_a2 * sum(np.sum(star.beta(s)) for s in SIDES))


def p_act_upsilon(bf: Beamformers, star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig) -> float:
    if cfg.passive:
        return 0.0
    Ups = upsilon_matrix(bf, ch, cfg)
    U = lift(star)
    return float(sum(np.trace(Ups @ U[s]).real for s in SIDES))
