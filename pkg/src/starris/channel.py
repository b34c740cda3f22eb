"""Rician channel generation for the BS -> STAR-RIS -> users geometry, plus
bounded CSI-error perturbations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import ChannelSet, SystemConfig
from .units import db_to_linear


@dataclass(frozen=True)
class GeometryConfig:
    """Scenario geometry and large-scale fading parameters (meters, dB)."""

    bs_position: tuple = (0.0, 0.0, 0.0)
    ris_position: tuple = (40.0, 0.0, 0.0)
    user_drop_radius: float = 3.0
    user_min_radius: float = 1.0
    pl0_db: float = -30.0
    exponent_bs_ris: float = 2.2
    exponent_ris_user: float = 2.8
    rician_k_bs_ris_db: float = 3.0
    rician_k_ris_user_db: float = 3.0
    ris_shape: tuple | None = None

    def __post_init__(self):
        bs = np.asarray(self.bs_position, float)
        ris = np.asarray(self.ris_position, float)
        if bs.shape != ris.shape or bs.shape[0] not in (2, 3):
            raise ValueError("positions must both be 2-D or both be 3-D")
        if np.linalg.norm(bs - ris) <= 0:
            raise ValueError("BS and STAR-RIS must not coincide")
        if not 0 < self.user_min_radius <= self.user_drop_radius:
            raise ValueError("need 0 < user_min_radius <= user_drop_radius")

    def path_loss(self, distance, exponent) -> np.ndarray:
        distance = np.asarray(distance, float)
        if np.any(distance <= 0):
            raise ValueError("distance must be positive")
        return db_to_linear(self.pl0_db) * distance ** (-exponent)


def _pos3(p) -> np.ndarray:
    p = np.asarray(p, float)
    return np.append(p, 0.0) if p.shape[0] == 2 else p


def ris_layout(M: int, shape=None) -> tuple[int, int]:
    """Rows x columns of the planar surface; the most square factorization by default."""
    if shape is not None:
        rows, cols = shape
        if rows * cols != M:
            raise ValueError(f"ris_shape {shape} does not hold M={M} elements")
        return int(rows), int(cols)
    rows = int(np.floor(np.sqrt(M)))
    while M % rows:
        rows -= 1
    return rows, M // rows


def ula_response(n: int, direction: np.ndarray) -> np.ndarray:
    """Half-wavelength ULA along the y axis."""
    return np.exp(1j * np.pi * np.arange(n) * direction[1])


def upa_response(rows: int, cols: int, direction: np.ndarray) -> np.ndarray:
    """Half-wavelength UPA in the y-z plane, rows along z, columns along y."""
    iz, iy = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return np.exp(1j * np.pi * (iy.ravel() * direction[1] + iz.ravel() * direction[2]))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n <= 0:
        raise ValueError("zero distance between nodes")
    return v / n


def _rician(los: np.ndarray, k_lin: float, rng: np.random.Generator) -> np.ndarray:
    nlos = (rng.standard_normal(los.shape) + 1j * rng.standard_normal(los.shape)) / np.sqrt(2)
    if np.isinf(k_lin):
        return los
    return np.sqrt(k_lin / (1 + k_lin)) * los + np.sqrt(1 / (1 + k_lin)) * nlos


def drop_users(geom: GeometryConfig, sides, rng: np.random.Generator) -> np.ndarray:
    """User positions, uniform over a half-annulus on each side of the surface.

    The surface normal points along +x; reflection users share the half-space
    of the BS (x below the surface), transmission users are behind it.
    """
    ris = _pos3(geom.ris_position)
    pos = np.empty((len(sides), 3))
    r0, r1 = geom.user_min_radius, geom.user_drop_radius
    for k, s in enumerate(sides):
        r = np.sqrt(rng.uniform(r0**2, r1**2))
        phi = rng.uniform(-np.pi / 2, np.pi / 2)
        if s == "r":
            phi += np.pi
        pos[k] = ris + r * np.array([np.cos(phi), np.sin(phi), 0.0])
    return pos


def generate(geom: GeometryConfig, cfg: SystemConfig, seed) -> ChannelSet:
    """Draw one Rician channel realization; user drops are part of the draw."""
    rng = np.random.default_rng(seed)
    bs = _pos3(geom.bs_position)
    ris = _pos3(geom.ris_position)
    rows, cols = ris_layout(cfg.M, geom.ris_shape)

    d_g = np.linalg.norm(ris - bs)
    e_bs_to_ris = _unit(ris - bs)
    los_g = np.outer(upa_response(rows, cols, -e_bs_to_ris), np.conj(ula_response(cfg.N, e_bs_to_ris)))
    G = np.sqrt(geom.path_loss(d_g, geom.exponent_bs_ris)) * _rician(
        los_g, db_to_linear(geom.rician_k_bs_ris_db), rng
    )

    users = drop_users(geom, cfg.user_sides, rng)
    h = np.empty((cfg.K, cfg.M), complex)
    k_lin = db_to_linear(geom.rician_k_ris_user_db)
    for k in range(cfg.K):
        d = np.linalg.norm(users[k] - ris)
        los = upa_response(rows, cols, _unit(users[k] - ris))
        h[k] = np.sqrt(geom.path_loss(d, geom.exponent_ris_user)) * _rician(los, k_lin, rng)
    return ChannelSet(G=G, h=h)


def trial_seeds(master_seed: int, n: int) -> list[int]:
    """Pairwise distinct per-trial seeds derived from one master seed."""
    state = np.random.SeedSequence(int(master_seed)).generate_state(n, dtype=np.uint64)
    seeds = [int(s) for s in state]
    if len(set(seeds)) != n:  # astronomically unlikely; fall back to spawning
        seeds = [int(c.generate_state(1, dtype=np.uint64)[0]) for c in np.random.SeedSequence(int(master_seed)).spawn(n)]
    return seeds


# ---------------------------------------------------------------------------
# CSI error


Direction = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def _random_direction(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
    return z / np.linalg.norm(z)


def apply_csi_error(
    ch: ChannelSet,
    mode: str,
    rho_c_max: float,
    seed,
    direction: Direction | None = None,
) -> ChannelSet:
    """Perturb every channel with a norm-bounded error.

    ``random``: one ratio ``rho_c ~ U[0, rho_c_max]`` per realization, shared by
    ``G`` and all ``h_k``; ``worst_case``: the ratio is pinned to ``rho_c_max``.
    Each error has Frobenius norm ``rho_c * ||channel||_F`` along a uniformly
    random direction, unless ``direction`` supplies one (unit-norm output
    expected).
    """
    if rho_c_max < 0:
        raise ValueError("rho_c_max must be non-negative")
    if mode not in ("random", "worst_case"):
        raise ValueError(f"unknown CSI error mode {mode!r}")
    if rho_c_max == 0:
        return ch
    rng = np.random.default_rng(seed)
    rho_c = rng.uniform(0.0, rho_c_max) if mode == "random" else rho_c_max
    pick = direction or _random_direction

    def perturb(x):
        d = pick(x, rng)
        return x + rho_c * np.linalg.norm(x) * d / np.linalg.norm(d)

    G = perturb(ch.G)
    h = np.stack([perturb(hk) for hk in ch.h])
    return ChannelSet(G=G, h=h)
