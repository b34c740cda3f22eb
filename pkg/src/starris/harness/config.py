"""Scenario and experiment configuration: YAML files validated by pydantic.

Powers are written in dBm in the file and converted to Watts for
:class:`~starris.model.SystemConfig`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..baselines import SCHEMES, SchemeSpec
from ..channel import GeometryConfig
from ..model import SystemConfig, normalize_side
from ..optimizer.ao import SolveOptions
from ..units import dbm_to_watt

TOL_ENV = "STARRIS_SOLVER_TOL"
EXPERIMENTS = ("convergence", "re_vs_m", "se_ee_tradeoff", "single_solve")


class ConfigError(ValueError):
    """Schema violation; ``errors`` lists ``(field path, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("invalid configuration:\n" + "\n".join(f"  {p}: {m}" for p, m in errors))


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SystemSection(_Section):
    N: int = Field(4, ge=1)
    M: int = Field(30, ge=1)
    K: int = Field(4, ge=1)
    user_sides: list[str] = ["transmission", "transmission", "reflection", "reflection"]
    p_bs_max_dbm: float = 30.0
    p_ris_max_dbm: float = 30.0
    r_min: float = Field(0.4, ge=0)
    rho_max: float = Field(5.0, gt=1)
    kappa_b: float = Field(0.02, ge=0, lt=1)
    kappa_u: float = Field(0.02, ge=0, lt=1)
    sigma2_dbm: float = -110.0
    sigma_a2_dbm: float = -110.0
    xi: float = Field(0.8, gt=0, le=1)
    p_r_dbm: float = 10.0
    p_c_dbm: float = 30.0
    bandwidth_hz: float = Field(10e6, gt=0)
    omega_ratio: float = Field(1.0, ge=0, description="omega / P_max")
    epsilon: float = Field(1e-3, gt=0)
    inner_tol: float = Field(1e-4, gt=0)

    @field_validator("user_sides")
    @classmethod
    def _sides(cls, v):
        return [{"t": "transmission", "r": "reflection"}[normalize_side(s)] for s in v]

    @model_validator(mode="after")
    def _count(self):
        if len(self.user_sides) != self.K:
            raise ValueError(f"user_sides lists {len(self.user_sides)} users but K = {self.K}")
        return self

    def build(self, **overrides) -> SystemConfig:
        cfg = SystemConfig(
            N=self.N, M=self.M, K=self.K, user_sides=tuple(self.user_sides),
            p_bs_max=dbm_to_watt(self.p_bs_max_dbm), p_ris_max=dbm_to_watt(self.p_ris_max_dbm),
            r_min=self.r_min, rho_max=self.rho_max, kappa_b=self.kappa_b, kappa_u=self.kappa_u,
            sigma2=dbm_to_watt(self.sigma2_dbm), sigma_a2=dbm_to_watt(self.sigma_a2_dbm), xi=self.xi,
            p_r=dbm_to_watt(self.p_r_dbm), p_c=dbm_to_watt(self.p_c_dbm), bandwidth=self.bandwidth_hz,
            epsilon=self.epsilon, inner_tol=self.inner_tol,
        )
        cfg = cfg.with_updates(**overrides) if overrides else cfg
        return cfg.with_updates(omega=self.omega_ratio * cfg.p_max)


class GeometrySection(_Section):
    bs_position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ris_position: tuple[float, float, float] = (40.0, 0.0, 0.0)
    user_drop_radius: float = Field(3.0, gt=0)
    user_min_radius: float = Field(1.0, ge=0)
    pl0_db: float = -30.0
    exponent_bs_ris: float = Field(2.2, gt=0)
    exponent_ris_user: float = Field(2.8, gt=0)
    rician_k_bs_ris_db: float = 3.0
    rician_k_ris_user_db: float = 3.0
    ris_shape: tuple[int, int] | None = None

    @model_validator(mode="after")
    def _radii(self):
        if self.user_min_radius >= self.user_drop_radius:
            raise ValueError("user_min_radius must be smaller than user_drop_radius")
        return self

    def build(self) -> GeometryConfig:
        return GeometryConfig(
            bs_position=tuple(self.bs_position), ris_position=tuple(self.ris_position),
            user_drop_radius=self.user_drop_radius, user_min_radius=self.user_min_radius,
            pl0_db=self.pl0_db, exponent_bs_ris=self.exponent_bs_ris, exponent_ris_user=self.exponent_ris_user,
            rician_k_bs_ris_db=self.rician_k_bs_ris_db, rician_k_ris_user_db=self.rician_k_ris_user_db,
            ris_shape=None if self.ris_shape is None else tuple(self.ris_shape),
        )


class SolverSection(_Section):
    max_outer: int = Field(30, ge=1)
    max_inner: int = Field(20, ge=1)
    n_randomizations: int = Field(50, ge=0)
    solver_tol: float = Field(1e-8, gt=0)
    solver_max_iter: int = Field(200, ge=1)
    init_retries: int = Field(10, ge=1)
    restore_iters: int = Field(20, ge=0)

    def build(self, seed: int, verbose: bool = False) -> SolveOptions:
        tol = self.solver_tol
        env = os.environ.get(TOL_ENV)
        if env:
            try:
                tol = float(env)
            except ValueError:
                raise ConfigError([(TOL_ENV, f"not a number: {env!r}")]) from None
            if not tol > 0:
                raise ConfigError([(TOL_ENV, "must be positive")])
        return SolveOptions(
            max_outer=self.max_outer, max_inner=self.max_inner, n_randomizations=self.n_randomizations,
            solver_tol=tol, solver_max_iter=self.solver_max_iter, seed=seed,
            init_retries=self.init_retries, restore_iters=self.restore_iters, verbose=verbose,
        )


class SchemesSection(_Section):
    rho_c_max: float = Field(1e-2, ge=0)
    zf_optimize_ris: bool = True

    def spec(self, scheme: str) -> SchemeSpec:
        return SchemeSpec(scheme, rho_c_max=self.rho_c_max, zf_optimize_ris=self.zf_optimize_ris)


class ExperimentSection(_Section):
    id: Literal["convergence", "re_vs_m", "se_ee_tradeoff", "single_solve"] = "single_solve"
    m_grid: list[int] = [8, 16, 24, 32, 40]
    n_grid: list[int] = [4, 6]
    p_bs_max_dbm_grid: list[float] = [20.0, 30.0]
    omega_ratio_grid: list[float] = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0]
    trials: int = Field(10, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    schemes: list[str] | None = None  # None: the experiment's own default list
    out: str = "results"
    workers: int = Field(1, ge=1)

    @field_validator("m_grid", "n_grid", "p_bs_max_dbm_grid", "omega_ratio_grid", "schemes")
    @classmethod
    def _non_empty(cls, v):
        if v is not None and not v:
            raise ValueError("grid must not be empty")
        return v

    @field_validator("m_grid", "n_grid")
    @classmethod
    def _positive(cls, v):
        if min(v) < 1:
            raise ValueError("grid entries must be >= 1")
        return v

    @field_validator("omega_ratio_grid")
    @classmethod
    def _weights(cls, v):
        if min(v) < 0:
            raise ValueError("weights must be non-negative")
        return v

    @field_validator("schemes")
    @classmethod
    def _known(cls, v):
        bad = [s for s in v or [] if s not in SCHEMES]
        if bad:
            raise ValueError(f"unknown schemes {bad}; expected a subset of {list(SCHEMES)}")
        return v


class FileConfig(_Section):
    system: SystemSection = SystemSection()
    geometry: GeometrySection = GeometrySection()
    solver: SolverSection = SolverSection()
    schemes: SchemesSection = SchemesSection()
    experiment: ExperimentSection = ExperimentSection()


@dataclass(frozen=True)
class Scenario:
    """Validated configuration plus the runtime objects built from it."""

    file: FileConfig
    system: SystemConfig
    geometry: GeometryConfig
    experiment: ExperimentSection

    def options(self, seed: int, verbose: bool = False) -> SolveOptions:
        return self.file.solver.build(seed, verbose)

    def system_for(self, **overrides) -> SystemConfig:
        """System config with dimension/budget overrides; ``omega`` follows the new ``P_max``."""
        return self.file.system.build(**overrides)


def _errors(exc: ValidationError) -> list[tuple[str, str]]:
    out = []
    for e in exc.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        out.append((path, e["msg"]))
    return out


def parse_config(data: dict | None) -> Scenario:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError([("<root>", "expected a mapping at the top level")])
    try:
        fc = FileConfig.model_validate(data)
        system = fc.system.build()
        geometry = fc.geometry.build()
    except ValidationError as exc:
        raise ConfigError(_errors(exc)) from None
    except ValueError as exc:
        raise ConfigError([("system", str(exc))]) from None
    return Scenario(fc, system, geometry, fc.experiment)


def load_config(path: str | os.PathLike | None) -> Scenario:
    """Read and validate a YAML config; ``None`` or an empty file gives the defaults."""
    if path is None:
        return parse_config({})
    path = Path(path)
    if not path.exists():
        raise ConfigError([(str(path), "config file not found")])
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([(str(path), f"not valid YAML: {exc}")]) from None
    return parse_config(data)


def dump_config(scenario: Scenario | FileConfig) -> str:
    fc = scenario.file if isinstance(scenario, Scenario) else scenario
    return yaml.safe_dump(fc.model_dump(mode="json"), sort_keys=False)
