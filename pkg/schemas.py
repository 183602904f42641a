from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field


class EscapeKindEnum(str, Enum):
    AXIAL = "axial"
    RADIAL = "radial"
    MAX_TIME = "max-time"
    BLOW_UP = "blow-up"


class QuasiclassicalReport(BaseModel):
    momentum_spread: float = Field(..., description="Δp/M [μm/μs]")
    eps1: float = Field(..., description="ħk/Δp")
    eps2: float = Field(..., description="kΔp/(Mγ)")
    eps2_kappa: float = Field(..., description="kΔp/(Mκ)")
    recoil_frequency: float = Field(..., description="ħk²/2M [rad/μs]")
    recoil_gamma_ratio: float
    recoil_kappa_ratio: float
    balance_spread: float = Field(..., description="Δp/M at which eps1 equals eps2 [μm/μs]")
    recoil_passed: bool
    failures: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


class SteadyStateReport(BaseModel):
    g: float
    S: float
    photon_number: float
    exp_ee: float
    exp_Phi: float
    exp_Psi: float
    chi_gg: float
    chi_gS: float
    chi_Sg: float
    chi_SS: float
    xi_gg: float
    xi_gS: float
    xi_Sg: float
    xi_SS: float
    residual: float
    truncation_change: float
    truncation_converged: bool


class ConvergenceReport(BaseModel):
    dt: float = Field(..., description="coarse step [μs]")
    horizon: float = Field(..., description="probe horizon [μs]")
    max_divergence: float = Field(..., description="max |r_dt − r_dt/2| [μm]")
    final_divergence: float = Field(..., description="|r_dt − r_dt/2| at the horizon [μm]")
    energy_drift_per_ms: float = Field(..., description="relative drift of the frozen oscillator")
    energy_excursion: float = Field(..., description="peak relative energy deviation")
    steps_per_period: float
    stable: bool


class TimescaleReport(BaseModel):
    axial_period_us: float = Field(..., description="measured period of x(t) about the well centre")
    radial_period_us: float = Field(..., description="measured period of ρ(t), orthogonal launch")
    rotation_period_ms: float = Field(..., description="polar revolution time, tangential launch")
    amplitude_ratio: float = Field(..., description="radial amplitude orthogonal / tangential")
    harmonic_axial_period_us: float
    harmonic_radial_period_us: float
    horizon_us: float


class TrajectoryRecord(BaseModel):
    index: int
    master_seed: int
    escape_time: float = Field(..., description="T [μs]")
    escape_kind: EscapeKindEnum
    censored: bool
    vx_rms: float = Field(..., description="primary v_x^rms [μm/μs]")
    vx_rms_full: float = Field(..., description="v_x^rms over the whole trajectory [μm/μs]")
    g_min: Optional[float] = Field(None, description="min |g| after equilibration [rad/μs]")
    g_max: Optional[float] = Field(None, description="max |g| after equilibration [rad/μs]")

    @property
    def seed_label(self) -> str:
        return f"{self.master_seed}:{self.index}"

    @property
    def escape_time_ms(self) -> float:
        return self.escape_time / 1000.0

    @property
    def vx_rms_cm_s(self) -> float:
        return self.vx_rms * 100.0

    @property
    def coupling_variation(self) -> Optional[float]:
        if self.g_min is None or self.g_max is None or self.g_max <= 0:
            return None
        return (self.g_max - self.g_min) / self.g_max


class SurvivalFit(BaseModel):
    times: List[float] = Field(..., description="Kaplan-Meier time grid")
    survival: List[float] = Field(..., description="P(T > t) on the time grid")
    tau_mle: float
    tau_lsq: Optional[float] = None
    sigma_tau: float
    lsq_degenerate: bool = False
    n: int
    n_events: int
    n_censored: int
    notices: List[str] = Field(default_factory=list)


class EnsembleReport(BaseModel):
    scenario: str
    n: int
    master_seed: int
    tau_mle_ms: Optional[float] = None
    tau_lsq_ms: Optional[float] = None
    sigma_ms: Optional[float] = None
    trapped_fraction: float = Field(..., ge=0.0, le=1.0)
    censored_n: int
    blowups: int
    survival_population: str
    trapped_vx_rms_cm_s: Optional[float] = None
    untrapped_vx_rms_cm_s: Optional[float] = None
    median_coupling_variation: Optional[float] = None
    notices: List[str] = Field(default_factory=list)


class ValidationCheck(BaseModel):
    module: str
    name: str
    passed: bool
    detail: str = ""
