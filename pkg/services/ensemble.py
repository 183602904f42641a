"""Monte Carlo trajectory ensembles and trapping statistics."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from config import PhysicalParams, ResolvedRun
from exceptions import EnsembleError, FitError, InvalidArgumentError
from schemas import EnsembleReport, EscapeKindEnum, SurvivalFit, TrajectoryRecord
from services.coefficients import CoefficientProvider, DirectBlochSource
from services.fields import coupling
from services.sde import NoiseSwitches, PhaseState, Trajectory, WienerStream, simulate_batch, well_spec
from services.survival import survival_and_fit
from utils.output import log
from utils.timing import measure_time

INITIAL_CONDITION_KEY = 1

# Per-process coefficient provider, set once by the pool initializer.
_WORKER_STATE: Dict[str, object] = {}


@dataclass(frozen=True)
class InitialConditionSpec:
    """Launch conditions: λ_S/8 off the well-5 antinode, on the doughnut ring.

    (y, z) = ρ₀(cos θ, sin θ). θ = 0 is the tangential incidence (y₀ = ρ_max
    with the initial velocity along z); θ = π/2 is the orthogonal one.
    """

    x0_over_lambda_S: float = 2.125
    rho0: Optional[float] = None
    v0: Tuple[float, float, float] = (0.0, 0.0, 0.1)
    incidence: str = "random"
    theta: Optional[float] = None

    def angle(self, rng: np.random.Generator) -> float:
        if self.theta is not None:
            return self.theta
        if self.incidence == "tangential":
            return 0.0
        if self.incidence == "orthogonal":
            return 0.5 * math.pi
        if self.incidence == "random":
            return float(rng.uniform(0.0, 2.0 * math.pi))
        raise InvalidArgumentError(
            f"Unknown incidence '{self.incidence}'",
            details={"allowed": ["random", "tangential", "orthogonal"]},
        )


def initial_rng(master_seed: int, index: int) -> np.random.Generator:
    """Generator for trajectory ``index``'s launch angle, disjoint from its noise stream."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(index, INITIAL_CONDITION_KEY))
    return np.random.Generator(np.random.Philox(seq))


def sample_initial(spec: InitialConditionSpec, params: PhysicalParams, rng: np.random.Generator) -> PhaseState:
    theta = spec.angle(rng)
    rho0 = spec.rho0 if spec.rho0 is not None else params.rho_max
    x0 = spec.x0_over_lambda_S * params.lambda_S
    return PhaseState.at(0.0, (x0, rho0 * math.cos(theta), rho0 * math.sin(theta)), spec.v0)


# ------------------------------------------------------------------
# Classification and per-trajectory diagnostics
# ------------------------------------------------------------------


@dataclass(frozen=True)
class TrappingPartition:
    trapped: List[TrajectoryRecord]
    untrapped: List[TrajectoryRecord]

    @property
    def trapped_fraction(self) -> float:
        total = len(self.trapped) + len(self.untrapped)
        return len(self.trapped) / total if total else 0.0


def classify_trapped(
    records: Sequence[TrajectoryRecord],
    v_threshold: float = 0.20,
    T_threshold: float = 2_000.0,
) -> TrappingPartition:
    """Trapped means T ≥ T_threshold [μs] and v_x^rms < v_threshold [μm/μs]."""
    trapped, untrapped = [], []
    for record in records:
        if record.escape_time >= T_threshold and record.vx_rms < v_threshold:
            trapped.append(record)
        else:
            untrapped.append(record)
    return TrappingPartition(trapped=trapped, untrapped=untrapped)


def coupling_variation(trajectory: Trajectory, params: PhysicalParams, equilibration: float = 2_000.0) -> float:
    """Δg = (max − min)/max of |g(r(t))| over the post-equilibration window.

    Uses recorded samples when present, otherwise the running extrema kept
    during integration.

    Raises:
        InvalidArgumentError: If the trajectory left before the window opened.
    """
    if trajectory.escape_time < equilibration:
        raise InvalidArgumentError(
            "Trajectory escaped before equilibration",
            details={"escape_time": trajectory.escape_time, "equilibration": equilibration},
        )
    if trajectory.times.size:
        window = trajectory.times >= equilibration
        if not np.any(window):
            raise InvalidArgumentError("No samples after equilibration", details={"equilibration": equilibration})
        g, _ = coupling(params, trajectory.positions[window])
        g = np.abs(g)
        g_min, g_max = float(g.min()), float(g.max())
    elif trajectory.g_min is not None and trajectory.g_max is not None:
        g_min, g_max = trajectory.g_min, trajectory.g_max
    else:
        raise InvalidArgumentError("Trajectory carries no post-equilibration coupling data")
    if g_max <= 0:
        return 0.0
    return (g_max - g_min) / g_max


# ------------------------------------------------------------------
# Ensemble execution
# ------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleResult:
    scenario: str
    master_seed: int
    records: List[TrajectoryRecord]
    partition: TrappingPartition
    survival: Optional[SurvivalFit]
    survival_population: str
    blowups: int
    notices: List[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.records)

    @property
    def censored_n(self) -> int:
        return sum(1 for r in self.records if r.censored)

    def report(self) -> EnsembleReport:
        def median(values):
            values = [v for v in values if v is not None]
            return float(np.median(values)) if values else None

        fit = self.survival
        return EnsembleReport(
            scenario=self.scenario,
            n=self.n,
            master_seed=self.master_seed,
            tau_mle_ms=fit.tau_mle if fit else None,
            tau_lsq_ms=fit.tau_lsq if fit else None,
            sigma_ms=fit.sigma_tau if fit else None,
            trapped_fraction=self.partition.trapped_fraction,
            censored_n=self.censored_n,
            blowups=self.blowups,
            survival_population=self.survival_population,
            trapped_vx_rms_cm_s=median(r.vx_rms_cm_s for r in self.partition.trapped),
            untrapped_vx_rms_cm_s=median(r.vx_rms_cm_s for r in self.partition.untrapped),
            median_coupling_variation=median(r.coupling_variation for r in self.partition.trapped),
            notices=list(self.notices),
        )


def _init_worker(run: ResolvedRun, source) -> None:
    _WORKER_STATE["provider"] = CoefficientProvider(run.params, source)


def _run_chunk(indices: Sequence[int], run: ResolvedRun, provider=None) -> List[TrajectoryRecord]:
    provider = provider if provider is not None else _WORKER_STATE["provider"]
    params = run.params
    seed = run.ensemble.master_seed
    well = well_spec(params, run.ensemble.well_index, run.escape_radius)
    spec = InitialConditionSpec(incidence=run.ensemble.incidence)
    initials = [sample_initial(spec, params, initial_rng(seed, i)) for i in indices]
    streams = [WienerStream(seed, i, run.sde.noise_block) for i in indices]
    trajectories = simulate_batch(
        initials,
        streams,
        well,
        provider,
        run.sde.dt,
        run.sde.t_max,
        switches=NoiseSwitches.from_section(run.sde),
        equilibration=run.ensemble.equilibration,
    )
    return [t.to_record(i, seed) for i, t in zip(indices, trajectories)]


def _chunks(n: int, size: int) -> List[List[int]]:
    return [list(range(start, min(start + size, n))) for start in range(0, n, size)]


@measure_time("run_ensemble")
def run_ensemble(
    run: ResolvedRun,
    source=None,
    workers: int = 1,
    verbose: bool = True,
) -> EnsembleResult:
    """Run ``run.ensemble.n`` independent trajectories and aggregate statistics.

    Trajectory ``i`` uses the noise stream (master_seed, i). Work is cut into
    chunks of ``chunk_size`` indices that always integrate together, and
    results are reduced in index order, so the outcome does not depend on the
    worker count or on scheduling.

    Args:
        run: Resolved run configuration.
        source: Bloch source (cache or direct); direct solves when omitted.
        workers: Process count.
        verbose: Show progress and status lines.

    Raises:
        EnsembleError: If more than the allowed fraction of trajectories
            blow up.
    """
    settings = run.ensemble
    source = source if source is not None else DirectBlochSource(run.params)
    chunks = _chunks(settings.n, settings.chunk_size)
    if verbose:
        log("ENSEMBLE", f"{run.scenario}: {settings.n} trajectories in {len(chunks)} chunks, {workers} worker(s)")

    records: List[TrajectoryRecord] = []
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(run, source)) as executor:
            futures = [executor.submit(_run_chunk, chunk, run) for chunk in chunks]
            iterator = tqdm(futures, desc="Trajectories", unit="chunk") if verbose else futures
            for future in iterator:
                records.extend(future.result())
    else:
        provider = CoefficientProvider(run.params, source)
        iterator = tqdm(chunks, desc="Trajectories", unit="chunk") if verbose else chunks
        for chunk in iterator:
            records.extend(_run_chunk(chunk, run, provider))
    records.sort(key=lambda r: r.index)
    return summarize_records(run, records)


def summarize_records(run: ResolvedRun, records: List[TrajectoryRecord]) -> EnsembleResult:
    """Classification, blow-up accounting and survival fit for a record set."""
    settings = run.ensemble
    blown = [r for r in records if r.escape_kind == EscapeKindEnum.BLOW_UP]
    valid = [r for r in records if r.escape_kind != EscapeKindEnum.BLOW_UP]
    if records and len(blown) > settings.max_blowup_fraction * len(records):
        raise EnsembleError(
            "Too many trajectories blew up",
            details={"blowups": len(blown), "n": len(records), "indices": [r.index for r in blown][:20]},
        )

    notices = []
    if blown:
        notices.append(f"{len(blown)} trajectories blew up and were excluded")
    partition = classify_trapped(valid, settings.v_threshold, settings.t_threshold)
    population = partition.trapped if settings.survival_population == "trapped" else valid

    fit = None
    if not population:
        notices.append("survival population is empty; fit skipped")
    else:
        try:
            fit = survival_and_fit(
                [r.escape_time_ms for r in population],
                [r.censored for r in population],
                bootstrap_resamples=settings.bootstrap_resamples,
                seed=settings.master_seed,
            )
            notices.extend(fit.notices)
        except FitError as e:
            notices.append(f"fit skipped: {e.message}")

    return EnsembleResult(
        scenario=run.scenario,
        master_seed=settings.master_seed,
        records=records,
        partition=partition,
        survival=fit,
        survival_population=settings.survival_population,
        blowups=len(blown),
        notices=notices,
    )
