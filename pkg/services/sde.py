"""Itô integration of single-atom trajectories with escape detection.

The update is Euler-Maruyama in velocity form, kick then drift:

    v' = v + (φ/M) dt − Γ_xx v_x dt x̂ + √(D_xx/M²) dW₁ x̂ + √(spont_i) dW_i
    r' = r + v' dt

with coefficients evaluated at the pre-step position and every Wiener
increment drawn from N(0, 2dt).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from config import PhysicalParams, SdeSection
from exceptions import BlowUpError, InvalidArgumentError
from schemas import ConvergenceReport, EscapeKindEnum, TrajectoryRecord
from services.coefficients import LocalCoefficients
from services.fields import axial_trap_frequency, radial_trap_frequency, well_centers

GRAVITY = 9.81e-6  # μm/μs²
DEFAULT_DT = 0.005
DRIFT_LIMIT_PER_MS = 0.01
EXCURSION_LIMIT = 0.05

_ACTIVE, _AXIAL, _RADIAL, _MAX_TIME, _BLOW_UP = range(5)
_KIND_BY_CODE = {
    _AXIAL: EscapeKindEnum.AXIAL,
    _RADIAL: EscapeKindEnum.RADIAL,
    _MAX_TIME: EscapeKindEnum.MAX_TIME,
    _BLOW_UP: EscapeKindEnum.BLOW_UP,
}


# ------------------------------------------------------------------
# Types
# ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhaseState:
    t: float
    r: np.ndarray
    v: np.ndarray

    @classmethod
    def at(cls, t: float, r: Sequence[float], v: Sequence[float]) -> "PhaseState":
        return cls(t=float(t), r=np.asarray(r, dtype=float).copy(), v=np.asarray(v, dtype=float).copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.r)) and np.all(np.isfinite(self.v)))


@dataclass(frozen=True)
class WellSpec:
    """Trapping region around one FORT antinode."""

    index: int
    center: float
    half_width: float
    radial_bound: float

    def exit_codes(self, r: np.ndarray) -> np.ndarray:
        """Per-row exit code; axial takes precedence over radial."""
        r = np.atleast_2d(r)
        rho = np.hypot(r[:, 1], r[:, 2])
        codes = np.full(r.shape[0], _ACTIVE)
        codes[rho > self.radial_bound] = _RADIAL
        codes[np.abs(r[:, 0] - self.center) > self.half_width] = _AXIAL
        return codes

    def contains(self, r) -> bool:
        return bool(self.exit_codes(np.asarray(r, dtype=float))[0] == _ACTIVE)


def well_spec(params: PhysicalParams, n: int = 5, radial_bound: Optional[float] = None) -> WellSpec:
    """Well ``n`` (1-based): λ_S/2 wide axially, radius 2W_S unless overridden."""
    if not 1 <= n <= params.cavity_half_wells:
        raise InvalidArgumentError(
            "Well index outside the cavity",
            details={"n": n, "wells": params.cavity_half_wells},
        )
    return WellSpec(
        index=n,
        center=float(well_centers(params)[n - 1]),
        half_width=params.lambda_S / 4.0,
        radial_bound=radial_bound if radial_bound is not None else 2.0 * params.W_S,
    )


@dataclass(frozen=True)
class NoiseSwitches:
    friction: bool = True
    dipole_noise: bool = True
    spontaneous_noise: bool = True
    gravity: bool = False

    @classmethod
    def from_section(cls, sde: SdeSection) -> "NoiseSwitches":
        return cls(
            friction=sde.friction,
            dipole_noise=sde.dipole_noise,
            spontaneous_noise=sde.spontaneous_noise,
            gravity=sde.gravity,
        )

    @classmethod
    def deterministic(cls) -> "NoiseSwitches":
        """Conservative motion: no noise, no friction."""
        return cls(friction=False, dipole_noise=False, spontaneous_noise=False)


class WienerStream:
    """Unit Gaussians for one trajectory from a counter-based generator.

    The stream is keyed by (master_seed, stream_id) and drawn in fixed-size
    blocks of four-component increments, so the sequence a trajectory
    consumes does not depend on which batch it runs in.
    """

    def __init__(self, master_seed: int, stream_id: int, block: int = 1024):
        seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(stream_id,))
        self._rng = np.random.Generator(np.random.Philox(seq))
        self.master_seed = master_seed
        self.stream_id = stream_id
        self.block = block
        self._buffer = np.empty((0, 4))
        self._pos = 0

    def take(self, count: int) -> np.ndarray:
        """Next ``count`` unit-variance draws, shape (count, 4)."""
        out = np.empty((count, 4))
        filled = 0
        while filled < count:
            if self._pos >= self._buffer.shape[0]:
                self._buffer = self._rng.standard_normal((self.block, 4))
                self._pos = 0
            n = min(count - filled, self._buffer.shape[0] - self._pos)
            out[filled:filled + n] = self._buffer[self._pos:self._pos + n]
            self._pos += n
            filled += n
        return out

    def increment(self, dt: float) -> np.ndarray:
        """One Wiener increment with variance 2dt per component."""
        return math.sqrt(2.0 * dt) * self.take(1)[0]


@dataclass(frozen=True, eq=False)
class Trajectory:
    initial: PhaseState
    stride: Optional[int]
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    escape_time: float
    escape_kind: EscapeKindEnum
    vx_rms_full: float
    vx_rms_post: float
    g_min: Optional[float]
    g_max: Optional[float]
    last_finite: PhaseState

    @property
    def censored(self) -> bool:
        return self.escape_kind == EscapeKindEnum.MAX_TIME

    @property
    def vx_rms(self) -> float:
        """Post-equilibration v_x^rms, or the full-trajectory value if that window is empty."""
        return self.vx_rms_post if np.isfinite(self.vx_rms_post) else self.vx_rms_full

    @property
    def samples(self) -> List[PhaseState]:
        return [PhaseState(t=float(t), r=r, v=v) for t, r, v in zip(self.times, self.positions, self.velocities)]

    def to_record(self, index: int, master_seed: int) -> TrajectoryRecord:
        return TrajectoryRecord(
            index=index,
            master_seed=master_seed,
            escape_time=self.escape_time,
            escape_kind=self.escape_kind,
            censored=self.censored,
            vx_rms=self.vx_rms,
            vx_rms_full=self.vx_rms_full,
            g_min=self.g_min,
            g_max=self.g_max,
        )


# ------------------------------------------------------------------
# Kernel
# ------------------------------------------------------------------


def advance(
    provider,
    r: np.ndarray,
    v: np.ndarray,
    dW: np.ndarray,
    dt: float,
    switches: NoiseSwitches,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One kick-drift step for a batch; returns (r', v', g at the old r)."""
    c = provider.local(r)
    accel = c.accel
    if switches.gravity:
        accel = accel + np.array([0.0, 0.0, -GRAVITY])
    v_new = v + accel * dt
    if switches.friction:
        v_new[:, 0] -= c.gamma_xx * v[:, 0] * dt
    if switches.dipole_noise:
        v_new[:, 0] += np.sqrt(c.diffusion_xx) * dW[:, 0]
    if switches.spontaneous_noise:
        v_new += np.sqrt(c.spont_diffusion) * dW[:, 1:]
    r_new = r + v_new * dt
    return r_new, v_new, np.asarray(c.g, dtype=float)


def step(
    state: PhaseState,
    provider,
    dt: float,
    rng: Union[WienerStream, np.random.Generator],
    switches: Optional[NoiseSwitches] = None,
) -> PhaseState:
    """Advance one trajectory by ``dt``.

    Raises:
        InvalidArgumentError: If ``dt`` is not positive.
        BlowUpError: If the new state is not finite.
    """
    if dt <= 0:
        raise InvalidArgumentError("dt must be positive", details={"dt": dt})
    switches = switches or NoiseSwitches()
    if isinstance(rng, WienerStream):
        dW = rng.increment(dt)
    else:
        dW = math.sqrt(2.0 * dt) * rng.standard_normal(4)
    r_new, v_new, _ = advance(provider, state.r[None, :], state.v[None, :], dW[None, :], dt, switches)
    new_state = PhaseState(t=state.t + dt, r=r_new[0], v=v_new[0])
    if not new_state.is_finite():
        raise BlowUpError(
            "Trajectory step produced non-finite values",
            details={"t": state.t, "r": state.r.tolist(), "v": state.v.tolist()},
        )
    return new_state


def simulate_batch(
    initials: Sequence[PhaseState],
    streams: Sequence[WienerStream],
    well: WellSpec,
    provider,
    dt: float,
    t_max: float,
    switches: Optional[NoiseSwitches] = None,
    stride: Optional[int] = None,
    equilibration: float = 2_000.0,
) -> List[Trajectory]:
    """Integrate a fixed set of trajectories together until each one exits.

    Walkers advance in lockstep; each consumes its own stream. A walker that
    blows up is marked ``blow-up`` and frozen at its last finite state while
    the rest continue. ``stride`` (steps) enables sample recording.
    """
    if dt <= 0:
        raise InvalidArgumentError("dt must be positive", details={"dt": dt})
    if len(initials) != len(streams):
        raise InvalidArgumentError(
            "Need one stream per trajectory",
            details={"initials": len(initials), "streams": len(streams)},
        )
    switches = switches or NoiseSwitches()
    n = len(initials)
    t0 = np.array([s.t for s in initials])
    r = np.stack([s.r for s in initials]).astype(float)
    v = np.stack([s.v for s in initials]).astype(float)
    scale = math.sqrt(2.0 * dt)
    n_steps = int(math.ceil((t_max - float(t0.min())) / dt - 1e-9))
    block = streams[0].block if streams else 1

    codes = well.exit_codes(r)
    escape_time = np.where(codes != _ACTIVE, t0, np.nan)
    sum_full = np.zeros(n)
    count_full = np.zeros(n)
    sum_post = np.zeros(n)
    count_post = np.zeros(n)
    g_lo = np.full(n, np.inf)
    g_hi = np.zeros(n)
    noise = np.empty((n, block, 4))

    recorded: List[List[Tuple[float, np.ndarray, np.ndarray]]] = [[] for _ in range(n)]
    if stride:
        for i in range(n):
            recorded[i].append((float(t0[i]), r[i].copy(), v[i].copy()))

    for k in range(n_steps):
        active = np.flatnonzero(codes == _ACTIVE)
        if active.size == 0:
            break
        slot = k % block
        if slot == 0:
            for i in active:
                noise[i] = streams[i].take(block)
        t_old = t0[active] + k * dt
        t_new = t0[active] + (k + 1) * dt

        r_new, v_new, g_old = advance(provider, r[active], v[active], scale * noise[active, slot], dt, switches)

        post = t_old >= equilibration
        abs_g = np.abs(g_old)
        g_lo[active] = np.where(post, np.minimum(g_lo[active], abs_g), g_lo[active])
        g_hi[active] = np.where(post, np.maximum(g_hi[active], abs_g), g_hi[active])

        finite = np.all(np.isfinite(r_new), axis=1) & np.all(np.isfinite(v_new), axis=1)
        blown = active[~finite]
        codes[blown] = _BLOW_UP
        escape_time[blown] = t_new[~finite]

        live = active[finite]
        r[live] = r_new[finite]
        v[live] = v_new[finite]
        vx2 = v_new[finite, 0] ** 2
        sum_full[live] += vx2
        count_full[live] += 1
        in_post = t_new[finite] >= equilibration
        sum_post[live] += np.where(in_post, vx2, 0.0)
        count_post[live] += in_post

        t_live = t_new[finite]
        exits = well.exit_codes(r[live]) if live.size else np.empty(0, dtype=int)
        escaped = exits != _ACTIVE
        codes[live[escaped]] = exits[escaped]
        escape_time[live[escaped]] = t_live[escaped]

        if stride:
            on_stride = (k + 1) % stride == 0
            for j, i in enumerate(live):
                if on_stride or escaped[j]:
                    recorded[i].append((float(t_live[j]), r[i].copy(), v[i].copy()))

    still = codes == _ACTIVE
    escape_time[still] = t_max
    codes[still] = _MAX_TIME

    trajectories = []
    for i in range(n):
        if stride and recorded[i]:
            times = np.array([s[0] for s in recorded[i]])
            positions = np.stack([s[1] for s in recorded[i]])
            velocities = np.stack([s[2] for s in recorded[i]])
        else:
            times = np.empty(0)
            positions = np.empty((0, 3))
            velocities = np.empty((0, 3))
        has_post = count_post[i] > 0
        trajectories.append(
            Trajectory(
                initial=initials[i],
                stride=stride,
                times=times,
                positions=positions,
                velocities=velocities,
                escape_time=float(escape_time[i]),
                escape_kind=_KIND_BY_CODE[int(codes[i])],
                vx_rms_full=float(np.sqrt(sum_full[i] / count_full[i])) if count_full[i] else 0.0,
                vx_rms_post=float(np.sqrt(sum_post[i] / count_post[i])) if has_post else float("nan"),
                g_min=float(g_lo[i]) if np.isfinite(g_lo[i]) else None,
                g_max=float(g_hi[i]) if np.isfinite(g_lo[i]) else None,
                last_finite=PhaseState(t=float(escape_time[i]), r=r[i].copy(), v=v[i].copy()),
            )
        )
    return trajectories


def simulate(
    initial: PhaseState,
    well: WellSpec,
    dt: float,
    t_max: float,
    rng_stream: WienerStream,
    provider,
    stride: Optional[int] = 200,
    switches: Optional[NoiseSwitches] = None,
    equilibration: float = 2_000.0,
) -> Trajectory:
    """Integrate one trajectory until it leaves ``well`` or reaches ``t_max``.

    Raises:
        InvalidArgumentError: If the initial position is outside the well.
        BlowUpError: If the trajectory produces non-finite values.
    """
    if not well.contains(initial.r):
        raise InvalidArgumentError(
            "Initial position is outside the well region",
            details={"r": initial.r.tolist(), "well": well.index},
        )
    trajectory = simulate_batch(
        [initial], [rng_stream], well, provider, dt, t_max,
        switches=switches, stride=stride, equilibration=equilibration,
    )[0]
    if trajectory.escape_kind == EscapeKindEnum.BLOW_UP:
        last = trajectory.last_finite
        raise BlowUpError(
            "Trajectory produced non-finite values",
            details={"t": last.t, "r": last.r.tolist(), "v": last.v.tolist()},
        )
    return trajectory


def angular_momentum_x(r: np.ndarray, v: np.ndarray) -> np.ndarray:
    """L_x/M = y v_z − z v_y."""
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    return r[..., 1] * v[..., 2] - r[..., 2] * v[..., 1]


# ------------------------------------------------------------------
# Step-size certification
# ------------------------------------------------------------------


class HarmonicProvider:
    """Frozen harmonic doughnut well around one antinode, no Bloch solves.

    Axial and radial restoring forces use the trap frequencies of the FORT
    about (x_n, ρ_max); friction and noise are constant.
    """

    def __init__(
        self,
        params: PhysicalParams,
        well_index: int = 5,
        gamma_xx: float = 0.0,
        diffusion_xx: float = 0.0,
        spont_diffusion: float = 0.0,
    ):
        self.omega2 = axial_trap_frequency(params) ** 2
        self.radial2 = radial_trap_frequency(params) ** 2
        self.center = float(well_centers(params)[well_index - 1])
        self.rho_max = params.rho_max
        self.gamma_xx = gamma_xx
        self.diffusion_xx = diffusion_xx
        self.spont_diffusion = spont_diffusion

    def local(self, r) -> LocalCoefficients:
        r = np.atleast_2d(np.asarray(r, dtype=float))
        n = r.shape[0]
        rho = np.hypot(r[:, 1], r[:, 2])
        pull = -self.radial2 * (rho - self.rho_max)
        inv_rho = np.divide(1.0, rho, out=np.zeros_like(rho), where=rho > 0)
        accel = np.stack(
            [-self.omega2 * (r[:, 0] - self.center), pull * r[:, 1] * inv_rho, pull * r[:, 2] * inv_rho],
            axis=-1,
        )
        return LocalCoefficients(
            accel=accel,
            gamma_xx=np.full(n, self.gamma_xx),
            diffusion_xx=np.full(n, self.diffusion_xx),
            spont_diffusion=np.full((n, 3), self.spont_diffusion),
            exp_ee=np.zeros(n),
            g=np.zeros(n),
        )


@dataclass(frozen=True)
class OscillatorDiagnostics:
    omega: float
    period: float
    steps_per_period: float
    drift_per_ms: float
    excursion: float

    @property
    def stable(self) -> bool:
        return abs(self.drift_per_ms) < DRIFT_LIMIT_PER_MS and self.excursion < EXCURSION_LIMIT


def frozen_oscillator(
    params: PhysicalParams,
    dt: float,
    horizon: float = 1_000.0,
    amplitude: Optional[float] = None,
) -> OscillatorDiagnostics:
    """Run the kick-drift rule on the harmonic axial well and measure energy.

    Drift compares the energy averaged over the first and the last oscillation
    period; excursion is the largest instantaneous relative deviation.
    """
    omega = axial_trap_frequency(params)
    period = 2.0 * math.pi / omega
    amplitude = amplitude if amplitude is not None else params.lambda_S / 8.0
    n_steps = int(math.ceil(horizon / dt))
    per_period = max(1, int(round(period / dt)))
    if omega * dt >= 2.0 or n_steps < 2 * per_period:
        return OscillatorDiagnostics(omega, period, period / dt, math.inf, math.inf)

    x, v = amplitude, 0.0
    energy0 = 0.5 * omega * omega * amplitude * amplitude
    energies = np.empty(n_steps)
    w2 = omega * omega
    for k in range(n_steps):
        v -= w2 * x * dt
        x += v * dt
        energies[k] = 0.5 * v * v + 0.5 * w2 * x * x

    first = energies[:per_period].mean()
    last = energies[-per_period:].mean()
    drift = (last - first) / energy0 / (horizon / 1000.0)
    excursion = float(np.max(np.abs(energies - energy0)) / energy0)
    return OscillatorDiagnostics(omega, period, period / dt, float(drift), excursion)


def convergence_probe(
    initial: PhaseState,
    well: WellSpec,
    dt: float,
    provider,
    params: PhysicalParams,
    horizon: float = 1_000.0,
    seed: int = 0,
    switches: Optional[NoiseSwitches] = None,
) -> ConvergenceReport:
    """Compare a path at ``dt`` with the same Wiener path refined to ``dt/2``.

    Each coarse increment ΔW is split by Brownian-bridge sampling into two
    half-step increments with mean ΔW/2 and variance dt/2. The report also
    carries the frozen-oscillator energy diagnostics at ``dt``.
    """
    switches = switches or NoiseSwitches()
    stream = WienerStream(seed, 0)
    scale = math.sqrt(2.0 * dt)
    half = 0.5 * dt

    r_c, v_c = initial.r[None, :].copy(), initial.v[None, :].copy()
    r_f, v_f = r_c.copy(), v_c.copy()
    n_steps = int(math.ceil(horizon / dt))
    max_div = 0.0
    div = 0.0
    t = initial.t
    for _ in range(n_steps):
        z = stream.take(2)
        dW = scale * z[0]
        dW_a = 0.5 * dW + 0.5 * scale * z[1]
        dW_b = dW - dW_a
        r_c, v_c, _ = advance(provider, r_c, v_c, dW[None, :], dt, switches)
        r_f, v_f, _ = advance(provider, r_f, v_f, dW_a[None, :], half, switches)
        r_f, v_f, _ = advance(provider, r_f, v_f, dW_b[None, :], half, switches)
        t += dt
        if not (np.all(np.isfinite(r_c)) and np.all(np.isfinite(r_f))):
            max_div = math.inf
            div = math.inf
            break
        div = float(np.linalg.norm(r_c[0] - r_f[0]))
        max_div = max(max_div, div)
        if not (well.contains(r_c[0]) and well.contains(r_f[0])):
            break

    oscillator = frozen_oscillator(params, dt, horizon)
    return ConvergenceReport(
        dt=dt,
        horizon=t - initial.t,
        max_divergence=max_div,
        final_divergence=div,
        energy_drift_per_ms=oscillator.drift_per_ms,
        energy_excursion=oscillator.excursion,
        steps_per_period=oscillator.steps_per_period,
        stable=oscillator.stable and math.isfinite(max_div),
    )
