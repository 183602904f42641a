"""Centralized configuration management for the cavity trap simulator.

Two layers live here:

* ``Settings`` holds process-level knobs (paths, worker count, timing flag)
  read from the environment and ``.env``.
* ``PhysicalParams`` and the ``RunConfig`` sections describe one run. A run is
  resolved from a named scenario preset (``assets/scenarios.yml``), an
  optional YAML config file and command-line flags, in that order of
  increasing precedence.

Units: μm, μs, rad/μs. Preset files may write an angular frequency as
``<name>_2pi: X`` meaning 2π·X rad/μs, and may give the FORT amplitude as a
peak Stark shift ``S_max`` instead of ``S0``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict
from scipy.constants import hbar, physical_constants

from exceptions import ConfigurationError

REPO_ROOT = Path(__file__).resolve().parent

CESIUM_MASS_U = 132.905
CYCLIC_SUFFIX = "_2pi"


def cesium_mass_over_hbar() -> float:
    """M/ħ for Cs-133 in μs/μm² (1 s/m² = 1e-6 μs/μm²)."""
    atomic_mass = physical_constants["atomic mass constant"][0]
    return CESIUM_MASS_U * atomic_mass / hbar * 1e-6


def _default_workers() -> int:
    return max(1, os.cpu_count() or 1)


class Settings(BaseSettings):
    """Process-level settings with validation."""

    # Paths
    scenarios_path: str = str(REPO_ROOT / "assets" / "scenarios.yml")
    output_dir: str = "runs"
    cache_dir: str = ".cache/coefficients"

    # Parallelism
    workers: int = Field(default_factory=_default_workers)

    # Feature Flags
    enable_timing: bool = False

    model_config = SettingsConfigDict(
        env_prefix="CAVITY_TRAP_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    @field_validator("workers")
    @classmethod
    def validate_workers(cls, v):
        """Validate the worker count is usable."""
        if v < 1:
            raise ValueError("workers must be at least 1")
        return v


# Singleton instance
_settings: Optional[Settings] = None


def get_settings() -> Settings:
    """Get or create settings instance."""
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


# ------------------------------------------------------------------
# Physical parameters
# ------------------------------------------------------------------


def peak_stark_factor(W_S: float, m: int) -> float:
    """ρ^{2m} e^{-2ρ²/W²} evaluated at the doughnut radius ρ = W√(m/2)."""
    return (W_S * W_S * m / 2.0) ** m * math.exp(-m)


class PhysicalParams(BaseModel):
    """All rates, geometry and truncation of one atom-cavity-FORT system."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma: float = Field(gt=0, description="atomic decay rate [rad/μs]")
    kappa: float = Field(gt=0, description="cavity field decay rate [rad/μs]")
    g0: float = Field(gt=0, description="peak atom-cavity coupling [rad/μs]")
    E: float = Field(ge=0, description="probe drive strength, raw [rad/μs]")
    delta_p: float = Field(description="probe detuning, negative is red [rad/μs]")
    lambda_g: float = Field(gt=0, description="cavity (and atomic) wavelength [μm]")
    W_g: float = Field(gt=0, description="cavity mode waist [μm]")
    W_S: float = Field(gt=0, description="FORT mode waist [μm]")
    S0: float = Field(ge=0, description="FORT Stark prefactor [rad/μs/μm^{2m}]")
    m: int = Field(ge=1, description="LG radial power index of the FORT mode")
    stark_case: Literal["a", "b"]
    cavity_mode: Literal["gaussian", "lg01"] = "gaussian"
    mass_hbar_ratio: float = Field(default_factory=cesium_mass_over_hbar, gt=0)
    n_max: int = Field(default=4, ge=1)

    @model_validator(mode="before")
    @classmethod
    def expand_preset_units(cls, data: Any) -> Any:
        """Convert ``*_2pi`` keys and ``S_max`` into canonical fields."""
        if not isinstance(data, dict):
            return data
        data = normalize_physics_layer(data)
        if "S_max" in data:
            data = dict(data)
            S_max = float(data.pop("S_max"))
            if "W_S" not in data or "m" not in data:
                raise ValueError("S_max requires W_S and m to derive S0")
            data["S0"] = S_max / peak_stark_factor(float(data["W_S"]), int(data["m"]))
        return data

    # ------ Derived quantities ------

    @property
    def lambda_S(self) -> float:
        """FORT wavelength; the cavity holds 16 cavity and 15 FORT half-waves."""
        return self.lambda_g * 16.0 / 15.0

    @property
    def k_g(self) -> float:
        return 2.0 * math.pi / self.lambda_g

    @property
    def k_a(self) -> float:
        return self.k_g

    @property
    def k_S(self) -> float:
        return 2.0 * math.pi / self.lambda_S

    @property
    def omega_ap(self) -> float:
        """Atom-probe detuning; the probe is resonant with atom and cavity alike."""
        return -self.delta_p

    @property
    def omega_gp(self) -> float:
        return -self.delta_p

    @property
    def hbar_over_mass(self) -> float:
        return 1.0 / self.mass_hbar_ratio

    @property
    def recoil_velocity(self) -> float:
        return self.hbar_over_mass * self.k_a

    @property
    def rho_max(self) -> float:
        """Radius of maximum FORT intensity."""
        return self.W_S * math.sqrt(self.m / 2.0)

    @property
    def S_max(self) -> float:
        return self.S0 * peak_stark_factor(self.W_S, self.m)

    @property
    def empty_cavity_photons(self) -> float:
        return self.E ** 2 / (self.kappa ** 2 + self.delta_p ** 2)

    @property
    def cavity_half_wells(self) -> int:
        """Number of FORT antinodes along the cavity (2L = 30 λ_S)."""
        return 30

    @property
    def fastest_rate(self) -> float:
        return max(self.kappa, self.gamma, abs(self.delta_p), self.g0, self.S_max)

    @property
    def slowest_decay(self) -> float:
        return min(self.kappa, self.gamma)

    def bloch_fingerprint(self) -> str:
        """Hash of every field that shapes the internal steady state and its grid."""
        payload = {
            "gamma": self.gamma,
            "kappa": self.kappa,
            "g0": self.g0,
            "E": self.E,
            "delta_p": self.delta_p,
            "stark_case": self.stark_case,
            "n_max": self.n_max,
            "S_max": self.S_max,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def normalize_physics_layer(layer: Dict[str, Any]) -> Dict[str, Any]:
    """Rewrite ``name_2pi: X`` entries of one config layer as ``name: 2πX``."""
    normalized: Dict[str, Any] = {}
    for key, value in layer.items():
        if key.endswith(CYCLIC_SUFFIX):
            normalized[key[: -len(CYCLIC_SUFFIX)]] = 2.0 * math.pi * float(value)
        else:
            normalized[key] = value
    return normalized


def merge_physics_layers(*layers: Dict[str, Any]) -> Dict[str, Any]:
    """Merge physics layers; a later ``S0`` replaces an earlier ``S_max`` and vice versa."""
    merged: Dict[str, Any] = {}
    for layer in layers:
        layer = normalize_physics_layer(layer)
        if "S0" in layer:
            merged.pop("S_max", None)
        if "S_max" in layer:
            merged.pop("S0", None)
        merged.update(layer)
    return merged


# ------------------------------------------------------------------
# Run configuration sections
# ------------------------------------------------------------------


class PhysicsSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: str = "case-b"
    overrides: Dict[str, Any] = Field(default_factory=dict)


class GridSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_g: int = Field(default=129, ge=33)
    n_s: int = Field(default=129, ge=33)
    use_cache: bool = True


class SdeSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dt: float = Field(default=0.005, gt=0, description="[μs]")
    t_max: float = Field(default=200_000.0, gt=0, description="censoring cap [μs]")
    stride: int = Field(default=200, ge=1)
    gravity: bool = False
    friction: bool = True
    dipole_noise: bool = True
    spontaneous_noise: bool = True
    escape_radius: Optional[float] = Field(default=None, gt=0, description="defaults to 2 W_S [μm]")
    noise_block: int = Field(default=1024, ge=1)


class EnsembleSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int = Field(default=400, ge=1)
    master_seed: int = Field(default=1, ge=0)
    workers: Optional[int] = Field(default=None, ge=1)
    chunk_size: int = Field(default=50, ge=1)
    incidence: Literal["random", "tangential", "orthogonal"] = "random"
    well_index: int = Field(default=5, ge=1)
    v_threshold: float = Field(default=0.20, gt=0, description="[μm/μs]")
    t_threshold: float = Field(default=2_000.0, gt=0, description="[μs]")
    equilibration: float = Field(default=2_000.0, ge=0, description="[μs]")
    survival_population: Literal["trapped", "all"] = "trapped"
    bootstrap_resamples: int = Field(default=1000, ge=10)
    max_blowup_fraction: float = Field(default=0.01, ge=0, le=1)


class IoSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    output_dir: Optional[str] = None
    timestamp: bool = True


class RunConfig(BaseModel):
    """Serializable description of one run, as read from or written to YAML."""

    model_config = ConfigDict(extra="forbid")

    physics: PhysicsSection = Field(default_factory=PhysicsSection)
    grid: GridSection = Field(default_factory=GridSection)
    sde: SdeSection = Field(default_factory=SdeSection)
    ensemble: EnsembleSection = Field(default_factory=EnsembleSection)
    io: IoSection = Field(default_factory=IoSection)

    def with_overrides(self, section: str, **values: Any) -> "RunConfig":
        """Return a copy where ``values`` are explicitly set on ``section``."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        current = getattr(self, section)
        try:
            updated = type(current)(**{**current.model_dump(exclude_unset=True), **values})
        except ValidationError as e:
            raise ConfigurationError(
                f"Invalid [{section}] settings",
                details={"error": str(e)},
            ) from e
        return self.model_copy(update={section: updated})


@dataclass(frozen=True)
class ResolvedRun:
    """A run with preset, file and flag layers collapsed into concrete values."""

    scenario: str
    params: PhysicalParams
    grid: GridSection
    sde: SdeSection
    ensemble: EnsembleSection
    io: IoSection

    @property
    def escape_radius(self) -> float:
        return self.sde.escape_radius or 2.0 * self.params.W_S

    def to_run_config(self) -> RunConfig:
        """Fully explicit RunConfig; re-resolving it reproduces this run."""
        return RunConfig(
            physics=PhysicsSection(scenario=self.scenario, overrides=self.params.model_dump()),
            grid=GridSection(**self.grid.model_dump()),
            sde=SdeSection(**self.sde.model_dump()),
            ensemble=EnsembleSection(**self.ensemble.model_dump()),
            io=IoSection(**self.io.model_dump()),
        )

    def scenario_hash(self) -> str:
        """Stable short hash of everything that determines simulation output."""
        payload = self.to_run_config().model_dump(exclude={"io"})
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


# ------------------------------------------------------------------
# Loading and resolution
# ------------------------------------------------------------------


@lru_cache(maxsize=8)
def _read_scenarios(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigurationError(
            f"Failed to read scenario presets: {path}",
            details={"path": path, "error": str(e)},
        ) from e
    return {name: spec for name, spec in data.items() if not name.startswith("_")}


def load_scenarios(path: Optional[str] = None) -> Dict[str, Any]:
    """Load scenario presets keyed by name."""
    return _read_scenarios(str(path or get_settings().scenarios_path))


def scenario_params(name: str, path: Optional[str] = None, **overrides: Any) -> PhysicalParams:
    """PhysicalParams of a named preset with optional raw-unit overrides."""
    presets = load_scenarios(path)
    if name not in presets:
        raise ConfigurationError(
            f"Unknown scenario '{name}'",
            details={"available": sorted(presets)},
        )
    layers = merge_physics_layers(presets[name].get("physics", {}), overrides)
    try:
        return PhysicalParams(**layers)
    except ValidationError as e:
        raise ConfigurationError(
            f"Invalid physical parameters for scenario '{name}'",
            details={"error": str(e)},
        ) from e


def resolve_run(config: RunConfig, scenarios_path: Optional[str] = None) -> ResolvedRun:
    """Collapse preset < config file < flags into a ResolvedRun."""
    name = config.physics.scenario
    presets = load_scenarios(scenarios_path)
    if name not in presets:
        raise ConfigurationError(
            f"Unknown scenario '{name}'",
            details={"available": sorted(presets)},
        )
    preset = presets[name]
    params = scenario_params(name, scenarios_path, **config.physics.overrides)

    def layered(section_cls, key: str):
        explicit = getattr(config, key).model_dump(exclude_unset=True)
        try:
            return section_cls(**{**preset.get(key, {}), **explicit})
        except ValidationError as e:
            raise ConfigurationError(
                f"Invalid [{key}] settings for scenario '{name}'",
                details={"error": str(e)},
            ) from e

    return ResolvedRun(
        scenario=name,
        params=params,
        grid=layered(GridSection, "grid"),
        sde=layered(SdeSection, "sde"),
        ensemble=layered(EnsembleSection, "ensemble"),
        io=layered(IoSection, "io"),
    )


def load_run_config(path: str) -> RunConfig:
    """Read a run configuration file, TOML for ``.toml`` paths and YAML otherwise."""
    try:
        if Path(path).suffix.lower() == ".toml":
            with open(path, "rb") as f:
                data = tomllib.load(f)
        else:
            with open(path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
        return RunConfig.model_validate(data)
    except (OSError, yaml.YAMLError, tomllib.TOMLDecodeError) as e:
        raise ConfigurationError(
            f"Failed to read config file: {path}",
            details={"path": path, "error": str(e)},
        ) from e
    except ValidationError as e:
        raise ConfigurationError(
            f"Invalid config file: {path}",
            details={"path": path, "error": str(e)},
        ) from e


def dump_run_config(run: ResolvedRun) -> str:
    """Serialize a resolved run as YAML text."""
    return yaml.safe_dump(run.to_run_config().model_dump(), sort_keys=False, allow_unicode=True)
