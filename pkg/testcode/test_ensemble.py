"""Tests for launch conditions, trapping classification and ensemble runs."""

import math

import numpy as np
import pytest
from scipy import stats

from exceptions import EnsembleError, InvalidArgumentError
from schemas import EscapeKindEnum, TrajectoryRecord
from services.ensemble import (
    InitialConditionSpec,
    classify_trapped,
    coupling_variation,
    initial_rng,
    run_ensemble,
    sample_initial,
    summarize_records,
)
from services.sde import HarmonicProvider, NoiseSwitches, WienerStream, angular_momentum_x, simulate, well_spec


def record(index, escape_time, vx_rms=0.1, kind=EscapeKindEnum.AXIAL, seed=1):
    return TrajectoryRecord(
        index=index,
        master_seed=seed,
        escape_time=escape_time,
        escape_kind=kind,
        censored=kind == EscapeKindEnum.MAX_TIME,
        vx_rms=vx_rms,
        vx_rms_full=vx_rms,
        g_min=100.0,
        g_max=150.0,
    )


class TestInitialConditions:
    def test_tangential_launch(self, case_b):
        state = sample_initial(InitialConditionSpec(incidence="tangential"), case_b, initial_rng(1, 0))
        assert state.r[0] == pytest.approx(2.125 * case_b.lambda_S)
        assert state.r[1] == pytest.approx(case_b.rho_max)
        assert state.r[2] == 0.0
        assert float(angular_momentum_x(state.r, state.v)) == pytest.approx(0.1 * case_b.rho_max)

    def test_orthogonal_launch_has_no_angular_momentum(self, case_b):
        state = sample_initial(InitialConditionSpec(incidence="orthogonal"), case_b, initial_rng(1, 0))
        assert state.r[2] == pytest.approx(case_b.rho_max)
        assert float(angular_momentum_x(state.r, state.v)) == pytest.approx(0.0, abs=1e-12)

    def test_launch_sits_inside_well_five(self, case_b):
        state = sample_initial(InitialConditionSpec(), case_b, initial_rng(4, 2))
        assert well_spec(case_b, 5).contains(state.r)

    def test_random_angle_is_reproducible_per_index(self):
        spec = InitialConditionSpec()
        first = spec.angle(initial_rng(8, 3))
        assert first == spec.angle(initial_rng(8, 3))
        assert first != spec.angle(initial_rng(8, 4))
        assert 0.0 <= first < 2.0 * math.pi

    def test_random_launch_angles_are_uniform(self, case_b):
        spec = InitialConditionSpec(incidence="random")
        states = [sample_initial(spec, case_b, initial_rng(9, i)) for i in range(10_000)]
        theta = np.mod([math.atan2(s.r[2], s.r[1]) for s in states], 2.0 * math.pi)
        counts, _ = np.histogram(theta, bins=20, range=(0.0, 2.0 * math.pi))
        assert stats.chisquare(counts).pvalue > 1e-3
        assert stats.kstest(theta / (2.0 * math.pi), "uniform").pvalue > 1e-3
        radii = np.hypot([s.r[1] for s in states], [s.r[2] for s in states])
        assert radii == pytest.approx(np.full(radii.size, case_b.rho_max))

    def test_explicit_theta_wins(self):
        spec = InitialConditionSpec(incidence="tangential", theta=1.0)
        assert spec.angle(initial_rng(1, 0)) == 1.0

    def test_unknown_incidence(self):
        with pytest.raises(InvalidArgumentError):
            InitialConditionSpec(incidence="grazing").angle(initial_rng(1, 0))


class TestClassification:
    def test_thresholds(self):
        records = [
            record(0, 5_000.0, 0.1),
            record(1, 5_000.0, 0.3),
            record(2, 1_000.0, 0.1),
            record(3, 2_000.0, 0.19),
        ]
        partition = classify_trapped(records, 0.20, 2_000.0)
        assert [r.index for r in partition.trapped] == [0, 3]
        assert partition.trapped_fraction == pytest.approx(0.5)

    def test_empty_partition(self):
        assert classify_trapped([]).trapped_fraction == 0.0


class TestCouplingVariation:
    def test_from_recorded_samples(self, case_b, harmonic):
        well = well_spec(case_b, 5)
        start = sample_initial(InitialConditionSpec(incidence="tangential"), case_b, initial_rng(1, 0))
        trajectory = simulate(start, well, 0.005, 20.0, WienerStream(1, 0), harmonic, stride=20, equilibration=5.0)
        variation = coupling_variation(trajectory, case_b, equilibration=5.0)
        assert 0.0 < variation <= 1.0

    def test_from_running_extrema(self, case_b):
        well = well_spec(case_b, 5)
        start = sample_initial(InitialConditionSpec(incidence="tangential"), case_b, initial_rng(1, 0))
        trajectory = simulate(
            start, well, 0.005, 4.0, WienerStream(1, 0), HarmonicProvider(case_b),
            stride=None, switches=NoiseSwitches.deterministic(), equilibration=1.0,
        )
        # the harmonic provider reports g = 0 everywhere
        assert coupling_variation(trajectory, case_b, equilibration=1.0) == 0.0

    def test_early_escape_is_rejected(self, case_b, harmonic):
        start = sample_initial(InitialConditionSpec(), case_b, initial_rng(1, 0))
        trajectory = simulate(start, well_spec(case_b, 5), 0.005, 2.0, WienerStream(1, 0), harmonic)
        with pytest.raises(InvalidArgumentError):
            coupling_variation(trajectory, case_b)


class TestSummaries:
    def test_too_many_blowups(self, run_factory):
        run = run_factory("case-b", ensemble={"n": 50})
        records = [record(i, 3_000.0) for i in range(49)]
        records.append(record(49, 10.0, kind=EscapeKindEnum.BLOW_UP))
        with pytest.raises(EnsembleError) as exc_info:
            summarize_records(run, records)
        assert exc_info.value.details["indices"] == [49]

    def test_rare_blowup_is_excluded_with_notice(self, run_factory):
        run = run_factory("case-b", ensemble={"n": 200, "bootstrap_resamples": 20})
        records = [record(i, 1_000.0 * (1 + i % 7)) for i in range(199)]
        records.append(record(199, 10.0, kind=EscapeKindEnum.BLOW_UP))
        result = summarize_records(run, records)
        assert result.blowups == 1
        assert result.survival.n == 199
        assert any("blew up" in notice for notice in result.notices)

    def test_trapped_population_for_case_a(self, run_factory):
        run = run_factory("case-a", ensemble={"bootstrap_resamples": 20})
        records = [record(i, 3_000.0 + 500.0 * i, vx_rms=0.1) for i in range(12)]
        records += [record(12 + i, 500.0, vx_rms=0.3) for i in range(8)]
        result = summarize_records(run, records)
        report = result.report()
        assert result.survival_population == "trapped"
        assert result.survival.n == 12
        assert report.trapped_fraction == pytest.approx(0.6)
        assert report.trapped_vx_rms_cm_s == pytest.approx(10.0)
        assert report.untrapped_vx_rms_cm_s == pytest.approx(30.0)
        assert report.median_coupling_variation == pytest.approx(1.0 / 3.0)

    def test_empty_population_skips_fit(self, run_factory):
        run = run_factory("case-a")
        result = summarize_records(run, [record(0, 100.0, vx_rms=0.5)])
        assert result.survival is None
        assert any("empty" in notice for notice in result.notices)

    def test_all_censored_is_reported(self, run_factory):
        run = run_factory("case-b")
        records = [record(i, 200_000.0, kind=EscapeKindEnum.MAX_TIME) for i in range(5)]
        result = summarize_records(run, records)
        assert result.survival is None
        assert result.censored_n == 5
        assert any("censored" in notice for notice in result.notices)


class TestRunEnsemble:
    @pytest.fixture
    def short_run(self, run_factory):
        return run_factory(
            "case-b",
            sde={"t_max": 20.0},
            ensemble={"n": 6, "chunk_size": 4, "master_seed": 3, "bootstrap_resamples": 10},
        )

    def test_records_in_index_order(self, short_run, case_b_cache):
        result = run_ensemble(short_run, case_b_cache, workers=1, verbose=False)
        assert [r.index for r in result.records] == list(range(6))
        assert all(r.seed_label == f"3:{r.index}" for r in result.records)
        assert all(r.escape_time <= 20.0 for r in result.records)

    def test_repeatable_and_worker_independent(self, short_run, case_b_cache):
        serial = run_ensemble(short_run, case_b_cache, workers=1, verbose=False)
        again = run_ensemble(short_run, case_b_cache, workers=1, verbose=False)
        pooled = run_ensemble(short_run, case_b_cache, workers=2, verbose=False)
        dumps = [[r.model_dump() for r in result.records] for result in (serial, again, pooled)]
        assert dumps[0] == dumps[1] == dumps[2]
