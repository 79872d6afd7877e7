"""Run configuration: a YAML document validated against a pydantic schema.

Every block has defaults, so an empty file is a valid single-cell run at
the default system parameters. Unknown keys anywhere are rejected. Power
and noise levels are given in dBm here and converted to watts exactly once,
in :meth:`RunConfig.budgets_for`.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .compression import DeltaOptions
from .orchestrator import SCHEMES, AOOptions
from .pairing import PairingOptions
from .powerbw import PBOptions
from .profiles import ProfileGenParams
from .scenario import SystemBudgets, make_budgets

SWEEP_VARIABLES = ("power_dbm", "num_users", "bandwidth_hz")


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScenarioBlock(_Block):
    num_users: int = Field(10, ge=2, description="N, even")
    cell_radius_m: float = Field(250.0, gt=0)
    shadow_sigma_db: float = Field(4.0, ge=0)
    seed: int = Field(0, ge=0, lt=2**64, description="base seed; draw d uses seed + d")
    draws: int = Field(100, ge=1)
    seeds: list[int] | None = Field(None, description="explicit per-draw seeds, overrides seed/draws")

    @field_validator("num_users")
    @classmethod
    def _even(cls, v):
        if v % 2:
            raise ValueError("num_users must be even")
        return v

    @field_validator("seeds")
    @classmethod
    def _seed_range(cls, v):
        if v is not None:
            if not v:
                raise ValueError("seeds must be non-empty when given")
            if any(s < 0 or s >= 2**64 for s in v):
                raise ValueError("seeds must be unsigned 64-bit integers")
        return v

    def seed_list(self) -> list[int]:
        if self.seeds is not None:
            return list(self.seeds)
        return [(self.seed + d) % 2**64 for d in range(self.draws)]


class BudgetsBlock(_Block):
    power_dbm: float = 30.0
    bandwidth_hz: float = Field(10e6, gt=0)
    max_latency_s: float = Field(0.1, gt=0)
    energy_budget_j: float = Field(0.25, gt=0)
    noise_psd_dbm_per_hz: float = -174.0
    distortion_max: float = Field(0.005, gt=0)
    delta_min: float = Field(0.0625, gt=0, le=1)
    comp_energy_coeff_j: float = Field(5e-3, gt=0)
    bs_cpu_hz: float = Field(10e9, gt=0)
    user_cpu_hz: float = Field(1e9, gt=0)
    bs_cycles: float = Field(1e8, gt=0)
    dec_cycles: float = Field(1e7, gt=0)
    source_bits: float = Field(256 * 256 * 3 * 8, gt=0)


class ProfilesBlock(_Block):
    similarity_mode: Literal["uniform", "cluster"] = "cluster"
    cluster_size: int = Field(4, ge=1)
    rho_lo: float = Field(0.02, ge=0)
    rho_lo_spread: float = Field(0.15, ge=0)
    rho_hi_base: float = Field(0.3, ge=0)
    rho_hi_spread: float = Field(0.5, ge=0)
    a_range: tuple[float, float] = (4.0, 16.0)
    b_range: tuple[float, float] = (4.0, 16.0)
    family_multiplier: float = Field(1.5, gt=0, description="rho inflation for the 'family' scheme")
    path: str | None = Field(None, description="load a fixed profile file instead of generating per draw")

    def gen_params(self) -> ProfileGenParams:
        return ProfileGenParams(
            similarity_mode=self.similarity_mode, cluster_size=self.cluster_size, rho_lo=self.rho_lo,
            rho_lo_spread=self.rho_lo_spread, rho_hi_base=self.rho_hi_base, rho_hi_spread=self.rho_hi_spread,
            a_range=tuple(self.a_range), b_range=tuple(self.b_range),
        )


class AlgorithmBlock(_Block):
    ao_eps: float = Field(1e-3, gt=0)
    ao_max_iter: int = Field(20, ge=1)
    delta_grid: int = Field(32, ge=2)
    delta_tol: float = Field(1e-6, gt=0)
    delta_max_iter: int = Field(200, ge=1)
    pb_eps: float = Field(1e-4, gt=0)
    pb_max_iter: int = Field(50, ge=1)
    barrier_gap: float = Field(1e-8, gt=0)
    solver: Literal["primal-dual", "barrier"] = "primal-dual"
    pairing_max_iter: int = Field(100, ge=1)
    pairing_tol: float = Field(1e-4, gt=0)

    def ao_options(self) -> AOOptions:
        return AOOptions(
            eps=self.ao_eps, max_iter=self.ao_max_iter,
            delta=DeltaOptions(grid_size=self.delta_grid, tol=self.delta_tol, max_iter=self.delta_max_iter),
            pb=PBOptions(eps=self.pb_eps, max_iter=self.pb_max_iter, barrier_gap=self.barrier_gap, solver=self.solver),
            pairing=PairingOptions(max_iter=self.pairing_max_iter, tol=self.pairing_tol),
        )


class SweepBlock(_Block):
    variable: Literal["power_dbm", "num_users", "bandwidth_hz"]
    values: list[float] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_values(self):
        if self.variable == "num_users":
            if any(v != int(v) or int(v) % 2 or v < 2 for v in self.values):
                raise ValueError("num_users sweep values must be even integers >= 2")
        if self.variable == "bandwidth_hz" and any(v <= 0 for v in self.values):
            raise ValueError("bandwidth_hz sweep values must be positive")
        return self


class OutputsBlock(_Block):
    dir: str = "results"
    rows_csv: str = "rows.csv"
    aggregate_csv: str = "aggregate.csv"
    plot_script: str = "plot_results.py"
    timing: bool = Field(True, description="false writes wall_ms as 0 so reruns are byte-identical")
    infeasible_as_zero: bool = Field(False, description="count infeasible draws as zero rate in the means")


class RunConfig(_Block):
    scenario: ScenarioBlock = ScenarioBlock()
    budgets: BudgetsBlock = BudgetsBlock()
    profiles: ProfilesBlock = ProfilesBlock()
    algorithm: AlgorithmBlock = AlgorithmBlock()
    sweeps: list[SweepBlock] = Field(default_factory=list, description="empty: a single cell at the defaults")
    schemes: list[str] = Field(default_factory=lambda: ["proposed", "equal", "channel", "fdma"])
    outputs: OutputsBlock = OutputsBlock()

    @field_validator("schemes")
    @classmethod
    def _known_schemes(cls, v):
        bad = [s for s in v if s not in SCHEMES]
        if bad:
            raise ValueError(f"unknown scheme(s) {bad}; choose from {list(SCHEMES)}")
        if not v:
            raise ValueError("at least one scheme is required")
        return list(dict.fromkeys(v))

    # -- derived ---------------------------------------------------------------
    def cells(self) -> list[tuple[str, float]]:
        """(sweep variable, value) pairs; a run without sweeps has one cell."""
        if not self.sweeps:
            return [("none", 0.0)]
        return [(s.variable, float(v)) for s in self.sweeps for v in s.values]

    def num_users_for(self, var: str, value: float) -> int:
        return int(value) if var == "num_users" else self.scenario.num_users

    def budgets_for(self, var: str, value: float) -> SystemBudgets:
        kw = self.budgets.model_dump()
        if var in ("power_dbm", "bandwidth_hz"):
            kw[var] = float(value)
        return make_budgets(self.num_users_for(var, value), **kw)

    def with_overrides(self, *, seed: int | None = None, schemes: list[str] | None = None,
                       out: str | None = None) -> "RunConfig":
        data = self.model_dump()
        if seed is not None:
            data["scenario"]["seed"] = seed
            data["scenario"]["seeds"] = None
        if schemes is not None:
            data["schemes"] = schemes
        if out is not None:
            data["outputs"]["dir"] = out
        return RunConfig.model_validate(data)


class ConfigError(ValueError):
    """Invalid configuration; the message lists each failing field path."""


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "\n".join(lines)


def parse_config(data: dict | None) -> RunConfig:
    try:
        return RunConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"<file>: not valid YAML ({exc})") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("<root>: expected a mapping at the top level")
    return parse_config(data)


def config_schema() -> dict:
    """JSON schema of the configuration document."""
    return RunConfig.model_json_schema()
