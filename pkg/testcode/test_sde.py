"""Tests for the Itô integrator, noise streams and escape detection."""

import numpy as np
import pytest

from config import SdeSection
from exceptions import BlowUpError, InvalidArgumentError
from schemas import EscapeKindEnum
from services.coefficients import LocalCoefficients
from services.sde import (
    DEFAULT_DT,
    HarmonicProvider,
    NoiseSwitches,
    PhaseState,
    WienerStream,
    advance,
    angular_momentum_x,
    convergence_probe,
    frozen_oscillator,
    simulate,
    simulate_batch,
    step,
    well_spec,
)


class PoisonedProvider(HarmonicProvider):
    """Harmonic well whose force is NaN for y < 0."""

    def local(self, r) -> LocalCoefficients:
        c = super().local(r)
        r = np.atleast_2d(r)
        accel = np.where((r[:, 1] < 0)[:, None], np.nan, c.accel)
        return LocalCoefficients(accel, c.gamma_xx, c.diffusion_xx, c.spont_diffusion, c.exp_ee, c.g)


class FreeProvider:
    """Free particle kicked only by constant spontaneous-emission noise."""

    def __init__(self, spont_diffusion):
        self.spont_diffusion = np.asarray(spont_diffusion, dtype=float)

    def local(self, r) -> LocalCoefficients:
        n = np.atleast_2d(r).shape[0]
        zeros = np.zeros(n)
        return LocalCoefficients(
            np.zeros((n, 3)), zeros, zeros, np.tile(self.spont_diffusion, (n, 1)), zeros, zeros
        )


@pytest.fixture
def well(case_b):
    return well_spec(case_b, 5)


@pytest.fixture
def at_rest(case_b, well):
    return PhaseState.at(0.0, (well.center, case_b.rho_max, 0.0), (0.0, 0.0, 0.0))


class TestWienerStream:
    def test_chunking_does_not_change_sequence(self):
        a = WienerStream(11, 4, block=16)
        b = WienerStream(11, 4, block=5)
        pieces = np.vstack([a.take(3), a.take(20), a.take(1)])
        assert np.array_equal(pieces[:5], b.take(5))

    def test_streams_are_distinct(self):
        assert not np.array_equal(WienerStream(1, 0).take(4), WienerStream(1, 1).take(4))
        assert not np.array_equal(WienerStream(1, 0).take(4), WienerStream(2, 0).take(4))

    def test_same_key_repeats(self):
        assert np.array_equal(WienerStream(9, 3).take(50), WienerStream(9, 3).take(50))

    def test_increment_variance_is_two_dt(self):
        dt = 0.01
        stream = WienerStream(5, 0, block=4096)
        samples = np.sqrt(2.0 * dt) * stream.take(40_000)
        assert np.var(samples) == pytest.approx(2.0 * dt, rel=0.03)
        assert stream.increment(dt).shape == (4,)


class TestWell:
    def test_rejects_index_outside_cavity(self, case_b):
        with pytest.raises(InvalidArgumentError):
            well_spec(case_b, 31)

    def test_axial_exit_takes_precedence(self, case_b, well):
        corner = np.array([well.center + 1.0, 3.0 * case_b.W_S, 0.0])
        assert well.exit_codes(corner)[0] != well.exit_codes(np.array([well.center, 3.0 * case_b.W_S, 0.0]))[0]

    def test_default_radial_bound(self, case_b, lg012):
        assert well_spec(case_b).radial_bound == pytest.approx(2.0 * case_b.W_S)
        assert well_spec(lg012, radial_bound=40.0).radial_bound == 40.0


class TestStep:
    def test_rejects_non_positive_dt(self, harmonic, at_rest):
        with pytest.raises(InvalidArgumentError):
            step(at_rest, harmonic, 0.0, WienerStream(1, 0))

    def test_blow_up_is_reported(self, case_b, at_rest):
        poisoned = PoisonedProvider(case_b)
        bad = PhaseState.at(0.0, (at_rest.r[0], -case_b.rho_max, 0.0), (0.0, 0.0, 0.0))
        with pytest.raises(BlowUpError) as exc_info:
            step(bad, poisoned, DEFAULT_DT, WienerStream(1, 0))
        assert exc_info.value.details["t"] == 0.0

    def test_deterministic_step_is_kick_then_drift(self, case_b, well):
        provider = HarmonicProvider(case_b)
        start = PhaseState.at(0.0, (well.center + 0.05, case_b.rho_max, 0.0), (0.1, 0.0, 0.0))
        dt = 0.01
        new = step(start, provider, dt, np.random.default_rng(0), NoiseSwitches.deterministic())
        v_expected = 0.1 - provider.omega2 * 0.05 * dt
        assert new.v[0] == pytest.approx(v_expected)
        assert new.r[0] == pytest.approx(well.center + 0.05 + v_expected * dt)
        assert new.t == pytest.approx(dt)


class TestSimulate:
    def test_rejects_start_outside_well(self, case_b, harmonic, well):
        outside = PhaseState.at(0.0, (well.center + 1.0, case_b.rho_max, 0.0), (0.0, 0.0, 0.0))
        with pytest.raises(InvalidArgumentError):
            simulate(outside, well, DEFAULT_DT, 1.0, WienerStream(1, 0), harmonic)

    def test_censored_at_t_max_with_recording(self, case_b, well, at_rest):
        trajectory = simulate(
            at_rest,
            well,
            0.01,
            1.0,
            WienerStream(1, 0),
            HarmonicProvider(case_b),
            stride=10,
            switches=NoiseSwitches.deterministic(),
        )
        assert trajectory.censored
        assert trajectory.escape_kind == EscapeKindEnum.MAX_TIME
        assert trajectory.escape_time == 1.0
        assert trajectory.times.size == 11
        assert np.allclose(np.diff(trajectory.times), 0.1)
        assert np.allclose(trajectory.positions, trajectory.positions[0])

    def test_fast_axial_atom_escapes_axially(self, case_b, well, harmonic):
        start = PhaseState.at(0.0, (well.center, case_b.rho_max, 0.0), (5.0, 0.0, 0.0))
        trajectory = simulate(start, well, DEFAULT_DT, 100.0, WienerStream(2, 0), harmonic, stride=None)
        assert trajectory.escape_kind == EscapeKindEnum.AXIAL
        assert trajectory.escape_time < 1.0
        assert trajectory.times.size == 0

    def test_fast_radial_atom_escapes_radially(self, case_b, well):
        start = PhaseState.at(0.0, (well.center, case_b.rho_max, 0.0), (0.0, 10.0, 0.0))
        trajectory = simulate(
            start, well, DEFAULT_DT, 100.0, WienerStream(2, 0), HarmonicProvider(case_b),
            switches=NoiseSwitches.deterministic(),
        )
        assert trajectory.escape_kind == EscapeKindEnum.RADIAL
        assert 2.0 < trajectory.escape_time < 4.0
        assert trajectory.samples[-1].t == trajectory.escape_time

    def test_short_run_falls_back_to_full_rms(self, harmonic, well, at_rest):
        trajectory = simulate(at_rest, well, DEFAULT_DT, 5.0, WienerStream(3, 0), harmonic)
        assert np.isnan(trajectory.vx_rms_post)
        assert trajectory.vx_rms == trajectory.vx_rms_full > 0.0
        assert trajectory.g_min is None

    def test_record_carries_seed_label(self, harmonic, well, at_rest):
        trajectory = simulate(at_rest, well, DEFAULT_DT, 2.0, WienerStream(3, 7), harmonic)
        record = trajectory.to_record(7, 3)
        assert record.censored
        assert record.escape_time == 2.0


class TestBatch:
    def test_results_do_not_depend_on_batch(self, case_b, harmonic, well, at_rest):
        initials = [at_rest] * 3

        def run(indices):
            return simulate_batch(
                [initials[i] for i in indices],
                [WienerStream(21, i, 64) for i in indices],
                well,
                harmonic,
                DEFAULT_DT,
                3.0,
                stride=50,
            )

        together = run([0, 1, 2])
        alone = run([2])[0]
        assert np.array_equal(together[2].positions, alone.positions)
        assert not np.array_equal(together[0].positions, together[1].positions)

    def test_blow_up_is_isolated(self, case_b, well, at_rest):
        poisoned = PoisonedProvider(case_b)
        bad = PhaseState.at(0.0, (well.center, -case_b.rho_max, 0.0), (0.0, 0.0, 0.0))
        good, broken = simulate_batch(
            [at_rest, bad],
            [WienerStream(1, 0), WienerStream(1, 1)],
            well,
            poisoned,
            DEFAULT_DT,
            1.0,
            switches=NoiseSwitches.deterministic(),
        )
        assert broken.escape_kind == EscapeKindEnum.BLOW_UP
        assert broken.last_finite.is_finite()
        assert good.escape_kind == EscapeKindEnum.MAX_TIME

    def test_single_blow_up_raises(self, case_b, well):
        bad = PhaseState.at(0.0, (well.center, -case_b.rho_max, 0.0), (0.0, 0.0, 0.0))
        with pytest.raises(BlowUpError):
            simulate(bad, well, DEFAULT_DT, 1.0, WienerStream(1, 0), PoisonedProvider(case_b))

    def test_stream_count_must_match(self, harmonic, well, at_rest):
        with pytest.raises(InvalidArgumentError):
            simulate_batch([at_rest, at_rest], [WienerStream(1, 0)], well, harmonic, DEFAULT_DT, 1.0)


class TestSpontaneousDiffusion:
    def test_velocity_variance_grows_as_two_d_t(self):
        D = 1e-4 * np.array([0.4, 0.3, 0.3])
        provider = FreeProvider(D)
        rng = np.random.default_rng(42)
        walkers, dt, steps = 10_000, 0.01, 400
        r = np.zeros((walkers, 3))
        v = np.zeros((walkers, 3))
        for _ in range(steps):
            dW = np.sqrt(2.0 * dt) * rng.standard_normal((walkers, 4))
            r, v, _ = advance(provider, r, v, dW, dt, NoiseSwitches())
        t = steps * dt
        assert np.mean(v**2, axis=0) == pytest.approx(2.0 * D * t, rel=0.05)
        assert np.mean(v, axis=0) == pytest.approx(np.zeros(3), abs=4.0 * np.sqrt(2.0 * D * t / walkers))

    def test_position_spread_follows_integrated_velocity(self):
        D = np.full(3, 1e-4)
        provider = FreeProvider(D)
        rng = np.random.default_rng(7)
        walkers, dt, steps = 10_000, 0.01, 400
        r = np.zeros((walkers, 3))
        v = np.zeros((walkers, 3))
        for _ in range(steps):
            dW = np.sqrt(2.0 * dt) * rng.standard_normal((walkers, 4))
            r, v, _ = advance(provider, r, v, dW, dt, NoiseSwitches())
        # kick-drift sum: x_N = dt Σ_k (N - k + 1) kicks_k
        expected = 2.0 * D[0] * dt**3 * sum(k * k for k in range(1, steps + 1))
        assert np.mean(r[:, 0] ** 2) == pytest.approx(expected, rel=0.06)


class TestStepSize:
    def test_default_step_is_stable(self, case_b):
        report = frozen_oscillator(case_b, DEFAULT_DT)
        assert report.stable
        assert report.steps_per_period > 300

    @pytest.mark.parametrize("dt", [0.1, 0.6])
    def test_coarse_step_is_unstable(self, case_b, dt):
        assert not frozen_oscillator(case_b, dt).stable

    def test_convergence_probe(self, case_b, harmonic, well, at_rest):
        report = convergence_probe(at_rest, well, 0.01, harmonic, case_b, horizon=100.0)
        assert report.stable
        assert report.horizon == pytest.approx(100.0)
        assert report.max_divergence < 1e-2
        assert report.final_divergence <= report.max_divergence


class TestHelpers:
    def test_angular_momentum(self):
        r = np.array([[0.0, 2.0, 0.0], [0.0, 0.0, 3.0]])
        v = np.array([[0.0, 0.0, 1.5], [0.0, 1.0, 0.0]])
        assert np.allclose(angular_momentum_x(r, v), [3.0, -3.0])

    def test_switches_from_section(self):
        switches = NoiseSwitches.from_section(SdeSection(friction=False, gravity=True))
        assert not switches.friction
        assert switches.gravity
        assert switches.dipole_noise
