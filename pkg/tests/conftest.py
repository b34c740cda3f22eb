"""Shared fixtures and independent reference implementations.

The reference functions below are written directly from the signal model,
term by term with explicit loops, and share no code with the package.
"""

from __future__ import annotations

import sys

import numpy as np
import pytest

from starris.model import Beamformers, ChannelSet, StarCoefficients, SystemConfig


def random_instance(rng: np.random.Generator, N=4, M=8, K=4, kappa=0.02, scale=1.0, passive=False,
                    sides=None):
    """Random unstructured channels, precoders and surface with O(1) entries."""
    sides = sides or tuple("t" if k < (K + 1) // 2 else "r" for k in range(K))
    cfg = SystemConfig(N=N, M=M, K=K, user_sides=sides, kappa_b=kappa, kappa_u=kappa,
                       sigma2=0.3, sigma_a2=0.2, p_bs_max=10.0, p_ris_max=10.0, passive=passive)

    def cn(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)

    ch = ChannelSet(G=scale * cn(M, N), h=scale * cn(K, M))
    bf = Beamformers(cn(K, N))
    star = StarCoefficients.from_amplitude_phase(
        rng.uniform(0.1, cfg.rho_max, M), rng.uniform(0, 2 * np.pi, M),
        rng.uniform(0.1, cfg.rho_max, M), rng.uniform(0, 2 * np.pi, M),
    )
    return cfg, ch, bf, star


def ref_sinr(k, bf, star, ch, cfg) -> float:
    """SINR from explicit sums over users, antennas and surface elements."""
    K, N, M = cfg.K, cfg.N, cfg.M
    coef = star.u_t if cfg.user_sides[k] == "t" else star.u_r
    # effective channel row: g[n] = sum_m conj(h_km) c_m G_mn
    g = np.zeros(N, complex)
    for n in range(N):
        for m in range(M):
            g[n] += np.conj(ch.h[k, m]) * coef[m] * ch.G[m, n]
    amp = [sum(g[n] * bf.w[l, n] for n in range(N)) for l in range(K)]
    desired = abs(amp[k]) ** 2
    others = sum(abs(amp[l]) ** 2 for l in range(K) if l != k)
    # BS distortion: antenna n carries kappa_b * sum_l |w_ln|^2
    bs_dist = sum(abs(g[n]) ** 2 * cfg.kappa_b * sum(abs(bf.w[l, n]) ** 2 for l in range(K)) for n in range(N))
    sigma_a2 = 0.0 if cfg.passive else cfg.sigma_a2
    ris_noise = sigma_a2 * sum(abs(ch.h[k, m]) ** 2 * abs(coef[m]) ** 2 for m in range(M))
    # power of the received signal before the user-side distortion
    received = desired + others + bs_dist + ris_noise + cfg.sigma2
    user_dist = cfg.kappa_u * received
    return desired / (others + bs_dist + ris_noise + cfg.sigma2 + user_dist)


def ref_p_act(bf, star, ch, cfg) -> float:
    """Amplifier output power: incident signal, BS distortion and thermal noise, per element."""
    if cfg.passive:
        return 0.0
    K, N, M = cfg.K, cfg.N, cfg.M
    total = 0.0
    for m in range(M):
        incident = sum(abs(sum(ch.G[m, n] * bf.w[k, n] for n in range(N))) ** 2 for k in range(K))
        dist = cfg.kappa_b * sum(abs(ch.G[m, n]) ** 2 * sum(abs(bf.w[k, n]) ** 2 for k in range(K)) for n in range(N))
        for coef in (star.u_t, star.u_r):
            total += abs(coef[m]) ** 2 * (incident + dist + cfg.sigma_a2)
    return total


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


class Reporter:
    """Collects one pass/fail line per acceptance criterion, plus supporting tables."""

    def __init__(self):
        self.lines = {}
        self.notes = {}

    def record(self, number: int, title: str, passed: bool, detail: str = "", notes=()):
        line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        self.lines[number] = line
        self.notes[number] = list(notes)
        print(line, file=sys.stderr)
        print(line)


_REPORTER = Reporter()


@pytest.fixture(scope="session")
def acceptance():
    return _REPORTER


def pytest_terminal_summary(terminalreporter):
    if _REPORTER.lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_REPORTER.lines):
            terminalreporter.write_line(_REPORTER.lines[n])
        for n in sorted(_REPORTER.notes):
            if _REPORTER.notes[n]:
                terminalreporter.write_line("")
                terminalreporter.write_line(f"criterion {n} details:")
                for note in _REPORTER.notes[n]:
                    terminalreporter.write_line(f"  {note}")
