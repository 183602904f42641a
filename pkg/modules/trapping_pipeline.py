"""Orchestrator for cavity-trap runs with a lazily built coefficient cache."""

from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import ResolvedRun, Settings, get_settings
from exceptions import InvalidArgumentError
from schemas import ConvergenceReport, SteadyStateReport, TimescaleReport
from services.coefficients import (
    CoefficientCache,
    CoefficientProvider,
    DirectBlochSource,
    load_or_build_cache,
)
from services.ensemble import (
    EnsembleResult,
    InitialConditionSpec,
    initial_rng,
    run_ensemble,
    sample_initial,
)
from services.fields import (
    axial_trap_frequency,
    coupling,
    dressed_detunings,
    radial_trap_frequency,
    stark_shift,
)
from services.hilbert import (
    build_operators,
    correlation_chi,
    correlation_pairs,
    correlation_xi,
    liouvillian_at,
    steady_state,
    truncation_diagnostic,
    vec,
)
from services.sde import (
    NoiseSwitches,
    Trajectory,
    WienerStream,
    convergence_probe,
    simulate,
    well_spec,
)

SCAN_RANGE = (0.0, 2.5)


class TrappingPipeline:
    """
    Serves every simulator command for one resolved run.

    The coefficient cache is loaded or built on first use and shared by the
    scans, single trajectories and ensembles that follow.
    """

    def __init__(
        self,
        run: ResolvedRun,
        settings: Optional[Settings] = None,
        workers: Optional[int] = None,
        verbose: bool = True,
        source=None,
    ):
        """
        Initialize the pipeline.

        Args:
            run: Resolved run configuration
            settings: Process settings (optional, uses get_settings())
            workers: Worker processes (falls back to the run, then settings)
            verbose: Emit status lines and progress bars
            source: Prebuilt Bloch source; skips the cache lookup when given
        """
        self.run = run
        self.params = run.params
        self.settings = settings or get_settings()
        self.workers = workers or run.ensemble.workers or self.settings.workers
        self.verbose = verbose
        self._source = source

    # ------ Sources ------

    @property
    def source(self):
        """Cached grid when enabled, direct master-equation solves otherwise."""
        if self._source is None:
            if self.run.grid.use_cache:
                self._source = load_or_build_cache(
                    self.params,
                    self.run.grid.n_g,
                    self.run.grid.n_s,
                    self.settings.cache_dir,
                    workers=self.workers,
                    verbose=self.verbose,
                )
            else:
                self._source = DirectBlochSource(self.params)
        return self._source

    @property
    def cache(self) -> Optional[CoefficientCache]:
        source = self.source
        return source if isinstance(source, CoefficientCache) else None

    @property
    def provider(self) -> CoefficientProvider:
        return CoefficientProvider(self.params, self.source)

    # ------ Internal state ------

    def steady_report(self, g: float, S: float) -> SteadyStateReport:
        """Steady-state observables and all χ/ξ integrals at (g, S)."""
        ops = build_operators(self.params.n_max)
        L = liouvillian_at(self.params, g, S)
        eta = steady_state(L)
        values = {}
        for suffix, A, B in correlation_pairs(ops):
            values[f"chi_{suffix}"] = correlation_chi(L, eta, A, B)
            values[f"xi_{suffix}"] = correlation_xi(L, eta, A, B)
        truncation = truncation_diagnostic(self.params, g, S)
        return SteadyStateReport(
            g=g,
            S=S,
            photon_number=eta.photon_number(ops),
            exp_ee=eta.excited_population(ops),
            exp_Phi=eta.expect(ops.Phi),
            exp_Psi=eta.expect(ops.Psi),
            residual=float(np.max(np.abs(L.matrix @ vec(eta.matrix)))),
            truncation_change=truncation.change,
            truncation_converged=truncation.converged,
            **values,
        )

    def steady_at(self, x_over_lambda_S: float, rho: float) -> SteadyStateReport:
        """steady_report at the position (x, ρ, 0)."""
        r = np.array([x_over_lambda_S * self.params.lambda_S, rho, 0.0])
        g, _ = coupling(self.params, r)
        S, _ = stark_shift(self.params, r)
        return self.steady_report(float(g), float(S))

    # ------ Axial scans ------

    def resolve_rho(self, rho) -> float:
        """Accept a radius in μm or the keyword ``max`` for ρ_max."""
        if rho is None or (isinstance(rho, str) and rho.lower() == "max"):
            return self.params.rho_max
        try:
            value = float(rho)
        except (TypeError, ValueError) as e:
            raise InvalidArgumentError(f"Invalid radius '{rho}'", details={"rho": rho}) from e
        if value < 0:
            raise InvalidArgumentError("Radius must be non-negative", details={"rho": value})
        return value

    def scan_positions(self, rho: float, points: int, x_range: Tuple[float, float] = SCAN_RANGE) -> np.ndarray:
        if points < 2:
            raise InvalidArgumentError("A scan needs at least 2 points", details={"points": points})
        x = np.linspace(x_range[0], x_range[1], points) * self.params.lambda_S
        return np.stack([x, np.full(points, rho), np.zeros(points)], axis=-1)

    def coefficient_scan(
        self,
        rho: float,
        points: int,
        x_range: Tuple[float, float] = SCAN_RANGE,
    ) -> List[Tuple[float, float, float, float, float]]:
        """Rows (x/λ_S, Γ_xx, D_xx/M², |φ|/M, φ_x/M) along the cavity axis at radius ``rho``."""
        r = self.scan_positions(rho, points, x_range)
        c = self.provider.local(r)
        x_scaled = r[:, 0] / self.params.lambda_S
        magnitude = np.linalg.norm(c.accel, axis=-1)
        return list(zip(x_scaled, c.gamma_xx, c.diffusion_xx, magnitude, c.accel[:, 0]))

    def dressed_scan(
        self,
        rho: float,
        points: int,
        x_range: Tuple[float, float] = SCAN_RANGE,
    ) -> List[Tuple[float, float, float]]:
        """Rows (x/λ_S, Δ₊, Δ₋) of dressed-state detunings at radius ``rho``."""
        r = self.scan_positions(rho, points, x_range)
        plus, minus = dressed_detunings(self.params, r)
        return list(zip(r[:, 0] / self.params.lambda_S, plus, minus))

    # ------ Trajectories ------

    def initial_spec(self, incidence: Optional[str] = None, theta: Optional[float] = None) -> InitialConditionSpec:
        return InitialConditionSpec(incidence=incidence or self.run.ensemble.incidence, theta=theta)

    def simulate_single(
        self,
        index: int = 0,
        incidence: Optional[str] = None,
        theta: Optional[float] = None,
        switches: Optional[NoiseSwitches] = None,
        t_max: Optional[float] = None,
        stride: Optional[int] = None,
    ) -> Trajectory:
        """One recorded trajectory on stream (master_seed, index)."""
        seed = self.run.ensemble.master_seed
        spec = self.initial_spec(incidence, theta)
        initial = sample_initial(spec, self.params, initial_rng(seed, index))
        return simulate(
            initial,
            well_spec(self.params, self.run.ensemble.well_index, self.run.escape_radius),
            self.run.sde.dt,
            t_max or self.run.sde.t_max,
            WienerStream(seed, index, self.run.sde.noise_block),
            self.provider,
            stride=stride or self.run.sde.stride,
            switches=switches or NoiseSwitches.from_section(self.run.sde),
            equilibration=self.run.ensemble.equilibration,
        )

    def timescales(self, horizon: float = 2_000.0, stride: int = 20) -> TimescaleReport:
        """Oscillation and rotation times of conservative single trajectories.

        The tangential launch gives the axial period, the rotation period and
        the reference radial amplitude; the orthogonal launch gives the
        radial period and amplitude.
        """
        conservative = NoiseSwitches.deterministic()
        tangential = self.simulate_single(0, "tangential", switches=conservative, t_max=horizon, stride=stride)
        orthogonal = self.simulate_single(0, "orthogonal", switches=conservative, t_max=horizon, stride=stride)
        center = well_spec(self.params, self.run.ensemble.well_index).center
        amp_t = radial_amplitude(tangential)
        return TimescaleReport(
            axial_period_us=oscillation_period(tangential.times, tangential.positions[:, 0] - center),
            radial_period_us=oscillation_period(orthogonal.times, _radius(orthogonal)),
            rotation_period_ms=rotation_period(tangential) / 1000.0,
            amplitude_ratio=radial_amplitude(orthogonal) / amp_t if amp_t > 0 else math.inf,
            harmonic_axial_period_us=2.0 * math.pi / axial_trap_frequency(self.params),
            harmonic_radial_period_us=2.0 * math.pi / radial_trap_frequency(self.params),
            horizon_us=horizon,
        )

    def ensemble(self) -> EnsembleResult:
        return run_ensemble(self.run, source=self.source, workers=self.workers, verbose=self.verbose)

    def probe(self, dt: Optional[float] = None, horizon: float = 1_000.0, seed: int = 0) -> ConvergenceReport:
        """Step-size convergence probe from the tangential launch state."""
        dt = dt or self.run.sde.dt
        initial = sample_initial(self.initial_spec("tangential"), self.params, initial_rng(seed, 0))
        return convergence_probe(
            initial,
            well_spec(self.params, self.run.ensemble.well_index, self.run.escape_radius),
            dt,
            self.provider,
            self.params,
            horizon=horizon,
            seed=seed,
            switches=NoiseSwitches.from_section(self.run.sde),
        )


def trajectory_rows(trajectory: Trajectory) -> List[Sequence[float]]:
    """Table rows t, x, y, z, vx, vy, vz, ρ for a recorded trajectory."""
    rho = np.hypot(trajectory.positions[:, 1], trajectory.positions[:, 2])
    return [
        (t, *r, *v, p)
        for t, r, v, p in zip(trajectory.times, trajectory.positions, trajectory.velocities, rho)
    ]


def rotation_period(trajectory: Trajectory) -> float:
    """Mean time per revolution of the polar angle in the (y, z) plane."""
    if trajectory.times.size < 2:
        return math.inf
    angle = np.unwrap(np.arctan2(trajectory.positions[:, 2], trajectory.positions[:, 1]))
    turns = abs(angle[-1] - angle[0]) / (2.0 * math.pi)
    if turns == 0:
        return math.inf
    return float((trajectory.times[-1] - trajectory.times[0]) / turns)


def _radius(trajectory: Trajectory) -> np.ndarray:
    return np.hypot(trajectory.positions[:, 1], trajectory.positions[:, 2])


def oscillation_period(times: np.ndarray, signal: np.ndarray) -> float:
    """Mean spacing of upward crossings of ``signal`` through its mean."""
    centered = np.asarray(signal, dtype=float) - np.mean(signal)
    up = np.flatnonzero((centered[:-1] < 0.0) & (centered[1:] >= 0.0))
    if up.size < 2:
        return math.inf
    # linear interpolation inside each bracketing sample pair
    frac = -centered[up] / (centered[up + 1] - centered[up])
    crossings = times[up] + frac * (times[up + 1] - times[up])
    return float(np.mean(np.diff(crossings)))


def radial_amplitude(trajectory: Trajectory) -> float:
    rho = _radius(trajectory)
    return 0.5 * float(rho.max() - rho.min())
