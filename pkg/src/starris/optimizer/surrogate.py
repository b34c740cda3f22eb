"""Quadratic-transform objective and the first-order surrogates used by both
subproblems."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import (
    Beamformers,
    ChannelSet,
    StarCoefficients,
    SystemConfig,
    cascaded_channels,
    interference_noise_powers,
    signal_powers,
)

LOG2E = float(np.log2(np.e))
FLOOR = 1e-12


def update_alpha(se: float, p_tot: float) -> float:
    if p_tot <= 0:
        raise ValueError("p_tot must be positive")
    if se < 0:
        raise ValueError("se must be non-negative")
    return float(np.sqrt(se) / p_tot)


def qt_objective(alpha: float, se: float, p_tot: float, cfg: SystemConfig) -> float:
    """``2 alpha sqrt(SE) - alpha^2 P_tot + omega SE / P_max``."""
    return float(2 * alpha * np.sqrt(max(se, 0.0)) - alpha**2 * p_tot + cfg.omega * se / cfg.p_max)


@dataclass(frozen=True)
class RateBound:
    """Affine lower bound of ``log2(1 + 1/(X Y))`` anchored at ``(x0, y0)``."""

    x0: float
    y0: float

    @property
    def constant(self) -> float:
        return float(np.log2(1 + 1 / (self.x0 * self.y0)))

    @property
    def slope_x(self) -> float:
        return -LOG2E / (self.x0 + self.x0**2 * self.y0)

    @property
    def slope_y(self) -> float:
        return -LOG2E / (self.y0 + self.y0**2 * self.x0)

    @property
    def slope_normalized(self) -> float:
        """Slope w.r.t. ``X / x0`` and ``Y / y0`` (identical for both)."""
        return -LOG2E / (1 + self.x0 * self.y0)

    def __call__(self, x, y):
        return self.constant + self.slope_x * (np.asarray(x) - self.x0) + self.slope_y * (np.asarray(y) - self.y0)


def build_rate_lower_bound(x0: float, y0: float) -> RateBound:
    if x0 <= 0 or y0 <= 0:
        raise ValueError("expansion points must be positive")
    return RateBound(float(x0), float(y0))


def pi_linearization(H_k: np.ndarray, w0: np.ndarray):
    """First-order lower bound of ``|H_k^H w|^2`` around ``w0``.

    Returns ``(a, offset)`` such that the bound reads
    ``2 Re(conj(a) * H_k^H w) - |a|^2`` with ``a = H_k^H w0``.
    """
    a = np.vdot(H_k, w0)
    return a, float(np.abs(a) ** 2)


def pi_value(H_k: np.ndarray, w0: np.ndarray, w: np.ndarray) -> float:
    a, off = pi_linearization(H_k, w0)
    return float(2 * np.real(np.conj(a) * np.vdot(H_k, w)) - off)


@dataclass(frozen=True)
class SurrogateState:
    """Expansion point of the SCA surrogates for one subproblem solve."""

    w: np.ndarray
    x0: np.ndarray
    y0: np.ndarray
    alpha: float

    @classmethod
    def at(cls, bf: Beamformers, star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig, alpha: float):
        sig = signal_powers(bf, star, ch, cfg)
        den = interference_noise_powers(bf, star, ch, cfg)
        # a zero-signal anchor only happens during feasibility restoration
        sig = np.maximum(sig, FLOOR * den)
        return cls(w=np.array(bf.w), x0=1.0 / sig, y0=den, alpha=float(alpha))

    def bounds(self) -> list[RateBound]:
        return [RateBound(float(x), float(y)) for x, y in zip(self.x0, self.y0)]

    def anchor_rates(self) -> np.ndarray:
        return np.log2(1 + 1 / (self.x0 * self.y0))
