"""System model of an active STAR-RIS downlink with transceiver hardware impairments.

Conventions
-----------
* ``G`` is the BS -> STAR-RIS channel, shape ``(M, N)``.
* ``h`` stacks the STAR-RIS -> user channels row-wise, shape ``(K, M)``;
  row ``k`` holds the column vector ``h_k`` (the user sees ``h_k^H``).
* A STAR-RIS side is described by its coefficient vector ``c_s`` whose
  entry ``m`` is ``sqrt(beta_m) * exp(j theta_m)``, i.e. the diagonal of
  ``Theta_s``. The lifted vector used in the SDP is ``conj(c_s)``.
* A cascaded channel ``H_k`` is stored so that ``H_k^H w == np.vdot(H_k, w)``.

All functions are pure; every array argument is left untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

SIDES = ("t", "r")

_SIDE_ALIASES = {
    "t": "t",
    "transmission": "t",
    "r": "r",
    "reflection": "r",
}


def normalize_side(label: str) -> str:
    try:
        return _SIDE_ALIASES[str(label).lower()]
    except KeyError:
        raise ValueError(f"unknown STAR-RIS side {label!r}; use 'transmission' or 'reflection'") from None


@dataclass(frozen=True)
class SystemConfig:
    """Scalar parameters of one scenario. All powers in Watts.

    ``passive`` switches the STAR-RIS feasible set to energy splitting
    (``beta_t + beta_r <= 1`` per element) and removes the amplification
    power from the budget and the power consumption.
    """

    N: int = 4
    M: int = 30
    K: int = 4
    user_sides: tuple = ("t", "t", "r", "r")
    p_bs_max: float = 1.0
    p_ris_max: float = 1.0
    r_min: float = 0.4
    rho_max: float = 5.0
    kappa_b: float = 0.02
    kappa_u: float = 0.02
    sigma2: float = 1e-14
    sigma_a2: float = 1e-14
    xi: float = 0.8
    p_r: float = 0.01
    p_c: float = 1.0
    bandwidth: float = 10e6
    omega: float = 1.0
    epsilon: float = 1e-3
    inner_tol: float = 1e-4
    passive: bool = False

    def __post_init__(self):
        sides = tuple(normalize_side(s) for s in self.user_sides)
        object.__setattr__(self, "user_sides", sides)
        if min(self.N, self.M, self.K) < 1:
            raise ValueError("N, M and K must all be >= 1")
        if len(sides) != self.K:
            raise ValueError(f"user_sides has {len(sides)} labels but K = {self.K}")
        for name in ("kappa_b", "kappa_u"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if not self.rho_max > 1.0:
            raise ValueError(f"rho_max must exceed 1, got {self.rho_max}")
        for name in ("p_bs_max", "p_ris_max", "sigma_a2", "p_r", "p_c", "r_min", "omega"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be strictly positive (SINR denominators)")
        if not 0.0 < self.xi <= 1.0:
            raise ValueError(f"xi must lie in (0, 1], got {self.xi}")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.p_max <= 0:
            raise ValueError("total power budget P_max must be positive")

    @property
    def p_max(self) -> float:
        """Whole-system power budget used to normalize the SE term of RE."""
        return (self.p_bs_max + self.p_ris_max) / self.xi + self.M * self.p_r + self.p_c

    def side_of(self, k: int) -> str:
        return self.user_sides[k]

    def users_on(self, side: str) -> list[int]:
        return [k for k, s in enumerate(self.user_sides) if s == side]

    def with_updates(self, **changes) -> "SystemConfig":
        return replace(self, **changes)


def _frozen(a, dtype=complex) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ChannelSet:
    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        G = _frozen(self.G)
        h = _frozen(np.atleast_2d(self.h))
        if G.ndim != 2:
            raise ValueError("G must be an (M, N) matrix")
        if h.shape[1] != G.shape[0]:
            raise ValueError(f"h rows have length {h.shape[1]} but G has {G.shape[0]} rows")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(h))):
            raise ValueError("channel entries must be finite")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)

    @property
    def M(self) -> int:
        return self.G.shape[0]

    @property
    def N(self) -> int:
        return self.G.shape[1]

    @property
    def K(self) -> int:
        return self.h.shape[0]

    def check(self, cfg: SystemConfig) -> None:
        if (self.M, self.N, self.K) != (cfg.M, cfg.N, cfg.K):
            raise ValueError(
                f"channel dimensions (M={self.M}, N={self.N}, K={self.K}) do not match "
                f"config (M={cfg.M}, N={cfg.N}, K={cfg.K})"
            )


@dataclass(frozen=True)
class StarCoefficients:
    """Transmission and reflection coefficients, one complex entry per element."""

    u_t: np.ndarray
    u_r: np.ndarray

    def __post_init__(self):
        u_t = _frozen(np.ravel(self.u_t))
        u_r = _frozen(np.ravel(self.u_r))
        if u_t.shape != u_r.shape:
            raise ValueError("u_t and u_r must have the same length")
        object.__setattr__(self, "u_t", u_t)
        object.__setattr__(self, "u_r", u_r)

    @classmethod
    def from_amplitude_phase(cls, beta_t, theta_t, beta_r, theta_r) -> "StarCoefficients":
        return cls(
            np.sqrt(np.asarray(beta_t, float)) * np.exp(1j * np.asarray(theta_t, float)),
            np.sqrt(np.asarray(beta_r, float)) * np.exp(1j * np.asarray(theta_r, float)),
        )

    def side(self, s: str) -> np.ndarray:
        return self.u_t if normalize_side(s) == "t" else self.u_r

    def beta(self, s: str) -> np.ndarray:
        return np.abs(self.side(s)) ** 2

    def theta(self, s: str) -> np.ndarray:
        return np.mod(np.angle(self.side(s)), 2 * np.pi)

    def scaled(self, factor: float) -> "StarCoefficients":
        return StarCoefficients(self.u_t * factor, self.u_r * factor)

    @property
    def M(self) -> int:
        return self.u_t.shape[0]


@dataclass(frozen=True)
class Beamformers:
    """Per-user precoders stacked row-wise, shape ``(K, N)``."""

    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", _frozen(np.atleast_2d(self.w)))

    def scaled(self, factor: float) -> "Beamformers":
        return Beamformers(self.w * factor)

    @property
    def K(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class MetricsReport:
    per_user_sinr: np.ndarray
    per_user_rate: np.ndarray
    se: float
    p_bs: float
    p_act: float
    p_tot: float
    ee: float
    re: float

    def as_dict(self) -> dict:
        return {
            "per_user_sinr": [float(x) for x in self.per_user_sinr],
            "per_user_rate": [float(x) for x in self.per_user_rate],
            "se": self.se,
            "p_bs": self.p_bs,
            "p_act": self.p_act,
            "p_tot": self.p_tot,
            "ee": self.ee,
            "re": self.re,
        }


@dataclass(frozen=True)
class FeasibilityReport:
    """Signed slack per constraint; negative slack is a violation."""

    bs_power_slack: float
    ris_power_slack: float
    rate_slack: np.ndarray
    amplitude_slack: np.ndarray = field(repr=False)

    @property
    def bs_power_ok(self) -> bool:
        return self.bs_power_slack >= 0

    @property
    def min_slack(self) -> float:
        return float(min(
            self.bs_power_slack,
            self.ris_power_slack,
            np.min(self.rate_slack),
            np.min(self.amplitude_slack),
        ))

    def satisfied(self, tol: float = 0.0) -> dict:
        return {
            "bs_power": self.bs_power_slack >= -tol,
            "ris_power": self.ris_power_slack >= -tol,
            "rate": bool(np.all(self.rate_slack >= -tol)),
            "amplitude": bool(np.all(self.amplitude_slack >= -tol)),
        }

    def ok(self, tol: float = 0.0) -> bool:
        return all(self.satisfied(tol).values())

    def as_dict(self) -> dict:
        return {
            "bs_power_slack": float(self.bs_power_slack),
            "ris_power_slack": float(self.ris_power_slack),
            "rate_slack": [float(x) for x in self.rate_slack],
            "min_amplitude_slack": float(np.min(self.amplitude_slack)),
        }


# ---------------------------------------------------------------------------
# channel algebra


def tilde_diag(A: np.ndarray) -> np.ndarray:
    """Keep the diagonal of ``A`` and zero everything else."""
    return np.diag(np.diag(A))


def cascaded_channel(h_k: np.ndarray, u: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Return ``H_k`` with ``H_k^H = h_k^H diag(u) G``."""
    h_k = np.ravel(h_k)
    u = np.ravel(u)
    if not (h_k.shape[0] == u.shape[0] == G.shape[0]):
        raise ValueError(
            f"dimension mismatch: len(h_k)={h_k.shape[0]}, len(u)={u.shape[0]}, G rows={G.shape[0]}"
        )
    return np.conj((np.conj(h_k) * u) @ G)


def cascaded_channels(star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig) -> np.ndarray:
    """All cascaded channels, shape ``(K, N)``."""
    u = np.stack([star.side(s) for s in cfg.user_sides])
    return np.conj((np.conj(ch.h) * u) @ ch.G)


def _effective_ris_gain(star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig) -> np.ndarray:
    """``||h_k^H Theta_{s_k}||^2`` for every user."""
    u = np.stack([star.side(s) for s in cfg.user_sides])
    return np.sum(np.abs(ch.h) ** 2 * np.abs(u) ** 2, axis=1)


def interference_noise_powers(
    bf: Beamformers, star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig
) -> np.ndarray:
    """Interference-plus-distortion-plus-noise power seen by every user."""
    H = cascaded_channels(star, ch, cfg)
    w = bf.w
    # gains[k, l] = |H_k^H w_l|^2
    gains = np.abs(np.conj(H) @ w.T) ** 2
    # per-antenna distortion: sum_l sum_n |H_kn|^2 |w_ln|^2
    per_antenna = (np.abs(H) ** 2) @ np.sum(np.abs(w) ** 2, axis=0)
    total = gains.sum(axis=1)
    inter = total - np.diag(gains)
    ris_gain = _effective_ris_gain(star, ch, cfg)
    sigma_a2 = 0.0 if cfg.passive else cfg.sigma_a2
    return (
        inter
        + cfg.kappa_u * total
        + (1 + cfg.kappa_u) * cfg.kappa_b * per_antenna
        + (1 + cfg.kappa_u) * (ris_gain * sigma_a2 + cfg.sigma2)
    )


def interference_noise_power(k, bf, star, ch, cfg) -> float:
    if not 0 <= k < cfg.K:
        raise IndexError(f"user index {k} out of range for K={cfg.K}")
    return float(interference_noise_powers(bf, star, ch, cfg)[k])


def signal_powers(bf: Beamformers, star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig) -> np.ndarray:
    H = cascaded_channels(star, ch, cfg)
    return np.abs(np.einsum("kn,kn->k", np.conj(H), bf.w)) ** 2


def sinrs(bf, star, ch, cfg) -> np.ndarray:
    den = interference_noise_powers(bf, star, ch, cfg)
    if np.any(den <= 0):
        raise ZeroDivisionError("interference-plus-noise power is zero")
    return signal_powers(bf, star, ch, cfg) / den


def sinr(k, bf, star, ch, cfg) -> float:
    return float(sinrs(bf, star, ch, cfg)[k])


def rates(bf, star, ch, cfg) -> np.ndarray:
    return np.log2(1.0 + sinrs(bf, star, ch, cfg))


def rate(k, bf, star, ch, cfg) -> float:
    return float(rates(bf, star, ch, cfg)[k])


def system_se(bf, star, ch, cfg) -> float:
    return float(np.sum(rates(bf, star, ch, cfg)))


# ---------------------------------------------------------------------------
# power model


def p_bs(bf: Beamformers) -> float:
    return float(np.sum(np.abs(bf.w) ** 2))


def p_act(bf: Beamformers, star: StarCoefficients, ch: ChannelSet, cfg: SystemConfig) -> float:
    """Expected amplification power of the STAR-RIS (zero for a passive surface).

    Symbols are independent with unit power, so the signal part is
    ``sum_k ||Theta_s G w_k||^2``; the BS distortion adds a per-antenna term.
    """
    if cfg.passive:
        return 0.0
    Gw = bf.w @ ch.G.T  # (K, M): row k is G w_k
    incident = np.sum(np.abs(Gw) ** 2, axis=0)
    distortion = cfg.kappa_b * (np.abs(ch.G) ** 2 @ np.sum(np.abs(bf.w) ** 2, axis=0))
    total = 0.0
    for s in SIDES:
        beta = star.beta(s)
        total += float(beta @ (incident + distortion + cfg.sigma_a2))
    return total


def p_tot(bf, star, ch, cfg) -> float:
    return (p_bs(bf) + p_act(bf, star, ch, cfg)) / cfg.xi + cfg.M * cfg.p_r + cfg.p_c


def efficiency_metrics(bf, star, ch, cfg) -> MetricsReport:
    s = sinrs(bf, star, ch, cfg)
    r = np.log2(1.0 + s)
    se = float(np.sum(r))
    pb = p_bs(bf)
    pa = p_act(bf, star, ch, cfg)
    pt = (pb + pa) / cfg.xi + cfg.M * cfg.p_r + cfg.p_c
    if pt <= 0:
        raise ValueError("total power consumption must be positive")
    return MetricsReport(
        per_user_sinr=s,
        per_user_rate=r,
        se=se,
        p_bs=pb,
        p_act=pa,
        p_tot=pt,
        ee=cfg.bandwidth * se / pt,
        re=se / pt + cfg.omega * se / cfg.p_max,
    )


def check_feasibility(bf, star, ch, cfg) -> FeasibilityReport:
    if cfg.passive:
        amp = 1.0 - (star.beta("t") + star.beta("r"))
        ris_slack = float("inf")
    else:
        amp = cfg.rho_max - np.concatenate([star.beta("t"), star.beta("r")])
        ris_slack = cfg.p_ris_max - p_act(bf, star, ch, cfg)
    return FeasibilityReport(
        bs_power_slack=cfg.p_bs_max - p_bs(bf),
        ris_power_slack=ris_slack,
        rate_slack=rates(bf, star, ch, cfg) - cfg.r_min,
        amplitude_slack=amp,
    )


# ---------------------------------------------------------------------------
# Monte-Carlo validation of the closed-form SINR


@dataclass(frozen=True)
class MonteCarloEstimate:
    sinr: float
    std_err: float
    n_draws: int


def _cn(rng: np.random.Generator, shape, var=1.0) -> np.ndarray:
    scale = np.sqrt(np.asarray(var) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def monte_carlo_sinr(k, bf, star, ch, cfg, n_draws=10**6, seed=0, chunk=200_000) -> MonteCarloEstimate:
    """Estimate SINR of user ``k`` by simulating the received signal directly.

    Draws data symbols, BS distortion (independent per antenna, power
    proportional to that antenna's transmit power), STAR-RIS thermal noise
    and AWGN, forms the pre-distortion received signal, then adds receiver
    distortion whose variance is proportional to the realized mean power of
    that signal. The standard error of the power ratio follows from the
    delta method.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    rng = np.random.default_rng(seed)
    u = star.side(cfg.side_of(k))
    H = cascaded_channel(ch.h[k], u, ch.G)
    hk_theta = np.conj(ch.h[k]) * u  # row vector h_k^H Theta
    w = bf.w
    gains = np.conj(H) @ w.T  # H_k^H w_l for all l
    antenna_power = np.sum(np.abs(w) ** 2, axis=0)
    sigma_a2 = 0.0 if cfg.passive else cfg.sigma_a2

    desired = np.empty(n_draws, complex)
    y_tilde = np.empty(n_draws, complex)
    done = 0
    while done < n_draws:
        n = min(chunk, n_draws - done)
        s = _cn(rng, (n, cfg.K))
        z_b = _cn(rng, (n, cfg.N), cfg.kappa_b * antenna_power)
        n_a = _cn(rng, (n, cfg.M), sigma_a2)
        n_k = _cn(rng, n, cfg.sigma2)
        rx = s @ gains + z_b @ np.conj(H) + n_a @ hk_theta + n_k
        desired[done:done + n] = gains[k] * s[:, k]
        y_tilde[done:done + n] = rx
        done += n

    n_u = _cn(rng, n_draws, cfg.kappa_u * np.mean(np.abs(y_tilde) ** 2))
    noise = y_tilde - desired + n_u
    a = np.abs(desired) ** 2
    b = np.abs(noise) ** 2
    ma, mb = a.mean(), b.mean()
    est = ma / mb
    if n_draws > 1:
        cov = np.cov(a, b)
        var = (cov[0, 0] / mb**2 - 2 * ma * cov[0, 1] / mb**3 + ma**2 * cov[1, 1] / mb**4) / n_draws
        se = float(np.sqrt(max(var, 0.0)))
    else:
        se = float("inf")
    return MonteCarloEstimate(sinr=float(est), std_err=se, n_draws=n_draws)
