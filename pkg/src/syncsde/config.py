"""Experiment configuration: TOML text validated into an immutable model.

Example::

    experiment = "nu-sweep"
    seeds = [0]
    nus = [1.0, 10.0, 100.0, 1000.0]
    window = [1.0, 2.0]
    x0 = "ramp"

    [system]
    N = 3
    lams = [1.0, 2.0, 3.0]
    coeffs = [[0.0]]

    [grid]
    t_min = -1.0
    t_max = 2.0
    h = 1e-4

Unknown keys anywhere are rejected.  Every tolerance has a default.
"""

from __future__ import annotations

import hashlib
import json
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .dynamics import SystemSpec, make_system
from .errors import ConfigurationError
from .noise import TimeGrid

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXPERIMENTS = (
    "pairwise-sync",
    "pullback-attractor",
    "nu-sweep",
    "averaged-convergence",
    "conjugacy-check",
    "spectral-check",
)

_STRICT = ConfigDict(extra="forbid", strict=True, frozen=True)


class Tolerances(BaseModel):
    model_config = _STRICT

    envelope_slack: float = 0.05
    envelope_fraction: float = 0.9
    max_decay_rate: float = -0.9
    attractor_tol: float = 1e-8
    invariance_tol: float = 1e-7
    attractor_fraction: float = 0.9
    slope_target: float = -1.0
    slope_halfwidth: float = 0.3
    exact_sync_floor: float = 1e-8
    averaged_fraction: float = 0.9
    residual_factor: float = 10.0
    conjugacy_rel: float = 1e-2
    conjugacy_fraction: float = 0.95
    spectral_atol: float = 1e-10
    bisection_tol: float = 1e-8
    comparison_atol: float = 1e-8
    flagged_budget: float = 0.2


class SystemConfig(BaseModel):
    """Cyclic system of drifts ``-lam_j x - b x^3 + g``.

    ``lams`` and a list-valued ``forcing`` are cycled to length ``N``; ``coeffs`` holds either one row
    shared by every component or ``N`` rows, each with ``m`` entries.
    """

    model_config = _STRICT

    N: int = Field(4, ge=3)
    d: int = Field(1, ge=1)
    m: int = Field(1, ge=1)
    drift: Literal["linear", "cubic"] = "linear"
    lams: List[float] = Field(default_factory=lambda: [1.0], min_length=1)
    cubic_b: float = Field(0.0, ge=0.0)
    forcing: Union[float, List[float]] = 1.0
    coeffs: List[List[float]] = Field(default_factory=lambda: [[0.5]], min_length=1)
    nu: float = Field(1.0, gt=0.0)

    @field_validator("lams")
    @classmethod
    def _positive_lams(cls, v):
        if any(not x > 0 for x in v):
            raise ValueError("every lam must be > 0")
        return v

    @model_validator(mode="after")
    def _shapes(self):
        if len(self.coeffs) not in (1, self.N):
            raise ValueError(f"coeffs must have 1 or N={self.N} rows, got {len(self.coeffs)}")
        if any(len(row) != self.m for row in self.coeffs):
            raise ValueError(f"every coeffs row must have m={self.m} entries")
        if isinstance(self.forcing, list) and not self.forcing:
            raise ValueError("forcing list must be non-empty")
        if self.drift == "cubic" and self.cubic_b == 0.0:
            raise ValueError("cubic drift needs cubic_b > 0")
        return self

    def lam_values(self) -> list:
        return [self.lams[j % len(self.lams)] for j in range(self.N)]

    def forcing_values(self) -> list:
        g = self.forcing if isinstance(self.forcing, list) else [self.forcing]
        return [g[j % len(g)] for j in range(self.N)]

    def coeff_matrix(self) -> np.ndarray:
        c = np.asarray(self.coeffs, dtype=float)
        return np.repeat(c, self.N, axis=0) if c.shape[0] == 1 else c

    def build(self, nu: Optional[float] = None) -> SystemSpec:
        return make_system(self.lam_values(), self.coeff_matrix(), self.nu if nu is None else nu,
                           d=self.d, forcing=np.asarray(self.forcing_values())[:, None],
                           cubic_b=self.cubic_b if self.drift == "cubic" else 0.0)

    @property
    def identical_components(self) -> bool:
        c = self.coeff_matrix()
        return (len(set(self.lam_values())) == 1 and len(set(self.forcing_values())) == 1
                and bool(np.all(c == c[0])))

    @property
    def noiseless(self) -> bool:
        return not np.any(self.coeff_matrix())


class GridConfig(BaseModel):
    model_config = _STRICT

    t_min: float = -40.0
    t_max: float = 30.0
    h: float = Field(0.01, gt=0.0)

    @model_validator(mode="after")
    def _valid(self):
        TimeGrid(self.t_min, self.t_max, self.h)
        return self

    def build(self) -> TimeGrid:
        return TimeGrid(self.t_min, self.t_max, self.h)


class ExperimentConfig(BaseModel):
    model_config = _STRICT

    experiment: Literal[EXPERIMENTS]
    system: SystemConfig = Field(default_factory=SystemConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    seeds: List[int] = Field(default_factory=lambda: [0])
    nus: List[float] = Field(default_factory=lambda: [1.0])
    window: Annotated[Tuple[float, float], Field(strict=False)] = (1.0, 2.0)
    depth: float = Field(30.0, gt=0.0)
    sweep_start: float = 0.0
    invariance_shift: float = 1.0
    x0: Union[Literal["ones", "ramp", "random"], List[float]] = "ramp"
    p_max: int = Field(50, ge=1)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    output_dir: Optional[str] = None

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if not v:
            raise ValueError("seeds must be non-empty")
        if len(set(v)) != len(v):
            raise ValueError("seeds must be distinct")
        return v

    @field_validator("nus")
    @classmethod
    def _nus(cls, v):
        if not v:
            raise ValueError("nus must be non-empty")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("nus not ascending")
        if any(not x > 0 for x in v):
            raise ValueError("every nu must be > 0")
        return v

    @field_validator("window")
    @classmethod
    def _window(cls, v):
        if not v[0] < v[1]:
            raise ValueError("window must satisfy T1 < T2")
        return v

    @model_validator(mode="after")
    def _sweep_start(self):
        if self.sweep_start > self.window[0]:
            raise ValueError("sweep_start must not exceed window[0]")
        return self

    @model_validator(mode="after")
    def _x0_length(self):
        if isinstance(self.x0, list) and len(self.x0) != self.system.N * self.system.d:
            raise ValueError(f"explicit x0 needs N*d = {self.system.N * self.system.d} values")
        return self

    def initial_state(self, seed: int = 0) -> np.ndarray:
        N, d = self.system.N, self.system.d
        if isinstance(self.x0, list):
            return np.asarray(self.x0, dtype=float).reshape(N, d)
        if self.x0 == "ones":
            return np.ones((N, d))
        if self.x0 == "ramp":
            return np.repeat(np.arange(1.0, N + 1.0)[:, None], d, axis=1)
        return np.random.default_rng([int(seed), 0x50]).standard_normal((N, d))

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form, ignoring ``output_dir``."""
        payload = self.model_dump(mode="json", exclude={"output_dir"})
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return ExperimentConfig.model_validate({**self.model_dump(), "seeds": list(seeds)})


class ConfigErrors(ConfigurationError):
    """All validation problems of one config, each as ``(path, message)``."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.problems))


def _problems(exc: ValidationError):
    out = []
    for e in exc.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = e["msg"]
        if e["type"] == "extra_forbidden":
            msg = "unknown key"
        out.append((path, msg.removeprefix("Value error, ")))
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate TOML text; raises :class:`ConfigErrors` listing every problem."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigErrors([("<toml>", str(exc))]) from None
    return config_from_dict(data)


def config_from_dict(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigErrors(_problems(exc)) from None


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigErrors([("<file>", f"not UTF-8: {exc}")]) from None
    return parse_config(text)


def config_schema() -> dict:
    return ExperimentConfig.model_json_schema()
