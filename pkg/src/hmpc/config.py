"""Experiment configuration schema.

Configs are JSON documents validated with pydantic. Angles accept radians
or a "deg" suffix, durations accept seconds or an "s"/"ms" suffix.
"""

from __future__ import annotations

import json
import math
from typing import Annotated, Any, Literal

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, model_validator

from hmpc.errors import ConfigError
from hmpc.utils import parse_angle, parse_seconds

Angle = Annotated[float, BeforeValidator(parse_angle)]
Seconds = Annotated[float, BeforeValidator(parse_seconds)]

SCHEME_KINDS = ("MPC1", "HMPC", "MPC2")
RK4_MAX_STEP = 0.2


def _is_multiple(a: float, b: float) -> bool:
    ratio = a / b
    return abs(ratio - round(ratio)) <= 1e-9 * max(1.0, ratio) and round(ratio) >= 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DoubleIntegratorParams(_Strict):
    x1_max: float = Field(2.0, gt=0)
    x2_max: float = Field(0.4, gt=0)
    u_min: float = Field(-4.0, lt=0)
    u_max: float = Field(10.0, gt=0)
    Q: tuple[float, float] = (1.0, 0.0)
    R: float = Field(0.04, gt=0)
    x0: tuple[float, float] = (2.0, 0.0)


class LaneChangeParams(_Strict):
    mass: float = Field(1500.0, gt=0)
    I_zz: float = Field(2500.0, gt=0)
    l_f: float = Field(1.1, gt=0)
    l_r: float = Field(1.6, gt=0)
    speed: float = Field(20.0, gt=0)
    C_f: float = Field(6.0e4, gt=0)
    C_r: float = Field(6.0e4, gt=0)
    F_w: float = 0.0
    y_bounds: tuple[float, float] = (-0.4, 10.0)
    psi_max: Angle = math.radians(7.0)
    delta_f_max: Angle = math.radians(35.0)
    delta_r_max: Angle = math.radians(4.0)
    u1_max: float = Field(1.2, gt=0)
    u2_max: float = Field(0.6, gt=0)
    x0: tuple[float, float, float, float, float, float] = (5.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    Q: tuple[float, ...] = (1.0,) * 6
    R: tuple[float, ...] = (1.0, 1.0)


class CustomModelParams(_Strict):
    """Box-constrained problem around a user model loaded from model_path."""

    x_lower: list[Angle | None]
    x_upper: list[Angle | None]
    u_lower: list[Angle]
    u_upper: list[Angle]
    Q: list[float]
    R: list[float]
    x0: list[float]
    model: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_shapes(self) -> CustomModelParams:
        n, m = len(self.x0), len(self.u_lower)
        if len(self.x_lower) != n or len(self.x_upper) != n or len(self.Q) != n:
            raise ValueError("x_lower, x_upper, Q and x0 must have the same length")
        if len(self.u_upper) != m or len(self.R) != m:
            raise ValueError("u_lower, u_upper and R must have the same length")
        return self


class SchemeConfig(_Strict):
    """One controller: its name, sampling time t_s, and discretization time t_d."""

    name: str
    t_s: Seconds
    t_d: Seconds
    kind: Literal["MPC1", "HMPC", "MPC2", "custom"] | None = None

    @property
    def label(self) -> str:
        if self.kind is not None:
            return self.kind
        return self.name if self.name in SCHEME_KINDS else "custom"

    @model_validator(mode="after")
    def _check_times(self) -> SchemeConfig:
        same = math.isclose(self.t_s, self.t_d, rel_tol=1e-9)
        if not (self.t_s < self.t_d or same):
            raise ValueError(f"Scheme '{self.name}': need t_s <= t_d")
        if self.label in ("MPC1", "MPC2") and not same:
            raise ValueError(f"Scheme '{self.name}': {self.label} requires t_s == t_d")
        if self.label == "HMPC" and same:
            raise ValueError(f"Scheme '{self.name}': HMPC requires t_s < t_d")
        return self


class DisturbanceConfig(_Strict):
    kind: Literal["zero", "constant", "random", "sinusoid"] = "random"
    amplitude: float = Field(0.5, ge=0)
    hold_time: Seconds = 0.5
    frequency: float = Field(1.0, gt=0)
    seed: int = 0


class SolverConfig(_Strict):
    qp_tol: float = Field(1e-6, gt=0)
    qp_max_iter: int = Field(4000, ge=1)
    sqp_max_iter: int = Field(50, ge=1)
    rk4_substeps: int | None = Field(None, ge=1)
    state_constraint_stages: Literal["1..N", "1..N-1"] = "1..N"
    terminal_set: bool = False
    discretization: Literal["exact", "rk4", "euler"] = "exact"
    terminal_t_d: Seconds = 0.02

    def substeps_for(self, t_d: float) -> int:
        """Explicit rk4_substeps, or one RK4 step per 200 ms of t_d."""
        if self.rk4_substeps is not None:
            return self.rk4_substeps
        return max(1, math.ceil(t_d / RK4_MAX_STEP - 1e-9))


class IssStudyConfig(_Strict):
    """Asymptotic-gain study of one scheme over disturbance bounds and the config seeds."""

    scheme: str = "HMPC"
    bounds: list[float] = Field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2], min_length=1)
    hold_time: Seconds = 0.5
    nominal_tol: float = Field(1e-3, gt=0)

    @model_validator(mode="after")
    def _check_bounds(self) -> IssStudyConfig:
        if any(bound < 0 for bound in self.bounds):
            raise ValueError("Disturbance bounds must be non-negative")
        return self


class GainStudyConfig(_Strict):
    """Discretization-error gain L(t_d) over random states.

    States are drawn uniformly from the state box scaled by state_scale, or
    from [-half_widths, half_widths] when the state set is unbounded.
    """

    t_d_grid: list[Seconds] = Field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05], min_length=1)
    t_d_ref: Seconds = 0.01
    n_states: int = Field(100, ge=1)
    seed: int = 0
    state_scale: float = Field(0.5, gt=0, le=1)
    half_widths: list[float] | None = None
    qp_tol: float = Field(1e-9, gt=0)

    @model_validator(mode="after")
    def _check_grid(self) -> GainStudyConfig:
        if any(t_d < self.t_d_ref for t_d in self.t_d_grid):
            raise ValueError("t_d_ref must not exceed any t_d of the grid")
        if self.half_widths is not None and any(w <= 0 for w in self.half_widths):
            raise ValueError("half_widths must be positive")
        return self


class ExperimentConfig(_Strict):
    """A full experiment: plant, schemes, horizon, disturbance, solver."""

    experiment: Literal["double-integrator", "lane-change", "custom-model-path"]
    schemes: list[SchemeConfig] = Field(min_length=1)
    horizon: Seconds = 2.0
    t_sim: Seconds = 20.0
    disturbance: DisturbanceConfig = Field(default_factory=DisturbanceConfig)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    output_dir: str = "results"
    solver: SolverConfig = Field(default_factory=SolverConfig)
    inject_delay: bool = False
    model_path: str | None = None
    params: dict[str, Any] = Field(default_factory=dict)
    iss: IssStudyConfig | None = None
    gain: GainStudyConfig | None = None

    @model_validator(mode="after")
    def _check(self) -> ExperimentConfig:
        names = [scheme.name for scheme in self.schemes]
        if len(set(names)) != len(names):
            raise ValueError("Scheme names must be unique")
        for scheme in self.schemes:
            if not _is_multiple(self.horizon, scheme.t_d):
                raise ValueError(f"Scheme '{scheme.name}': horizon {self.horizon} is not a multiple of t_d={scheme.t_d}")
            if scheme.t_s > self.t_sim:
                raise ValueError(f"Scheme '{scheme.name}': t_s exceeds t_sim")
        if self.iss is not None and self.iss.scheme not in names:
            raise ValueError(f"ISS study scheme '{self.iss.scheme}' is not among the schemes")
        if self.gain is not None:
            for t_d in [*self.gain.t_d_grid, self.gain.t_d_ref]:
                if not _is_multiple(self.horizon, t_d):
                    raise ValueError(f"Gain study: horizon {self.horizon} is not a multiple of t_d={t_d}")
        if self.experiment == "custom-model-path" and not self.model_path:
            raise ValueError("custom-model-path experiments need model_path")
        try:
            self.model_params()
        except ValidationError as exc:
            raise ValueError(f"Invalid params for {self.experiment}: {exc}") from exc
        return self

    def model_params(self) -> DoubleIntegratorParams | LaneChangeParams | CustomModelParams:
        """Typed view of params for the selected experiment."""
        schema = {
            "double-integrator": DoubleIntegratorParams,
            "lane-change": LaneChangeParams,
            "custom-model-path": CustomModelParams,
        }[self.experiment]
        return schema.model_validate(self.params)

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
        update: dict[str, Any] = {}
        if seed is not None:
            update["disturbance"] = self.disturbance.model_copy(update={"seed": seed})
            update["seeds"] = [seed]
        if output_dir is not None:
            update["output_dir"] = output_dir
        return self.model_copy(update=update)

    def resolved(self) -> dict[str, Any]:
        """JSON-ready config with defaults filled in and params typed."""
        data = self.model_dump(mode="json")
        data["params"] = self.model_params().model_dump(mode="json")
        return data


def _is_comparison(data: dict[str, Any]) -> bool:
    return isinstance(data.get("config"), dict) and "schemes" in data and "ts_ratio" in data


def load_config(data: dict[str, Any]) -> ExperimentConfig:
    """Validate a decoded config document.

    A comparison.json written by a run is accepted too; its resolved
    "config" entry is replayed.

    Raises:
        ConfigError: With the validation message.
    """
    if _is_comparison(data):
        data = data["config"]
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(text: str) -> ExperimentConfig:
    """Decode and validate a JSON config.

    Raises:
        ConfigError: On malformed JSON or an invalid document.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("Config must be a JSON object")
    return load_config(data)
