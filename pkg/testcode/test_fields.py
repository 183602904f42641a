"""Tests for mode geometry, Stark shifts and quasi-classical checks."""

import math

import numpy as np
import pytest

from config import scenario_params
from exceptions import InvalidArgumentError
from services.fields import (
    axial_trap_frequency,
    coupling,
    dressed_detunings,
    field_point,
    lg_intensity,
    radial_trap_frequency,
    stark_from_intensity,
    stark_prefactor,
    stark_shift,
    validate_quasiclassical,
    well_centers,
)

TWO_PI = 2.0 * math.pi


def antinode(params, well: int = 5):
    return np.array([well_centers(params)[well - 1], params.rho_max, 0.0])


class TestGeometry:
    def test_doughnut_radius(self, case_b):
        assert case_b.rho_max == pytest.approx(14.14, rel=5e-3)

    @pytest.mark.parametrize("scenario", ["case-b", "case-b-LG012"])
    def test_peak_stark_shift(self, scenario):
        params = scenario_params(scenario)
        S, _ = stark_shift(params, antinode(params))
        assert float(S) == pytest.approx(TWO_PI * 50.0, rel=1e-3)
        assert params.rho_max == pytest.approx(20.0 / math.sqrt(2.0), rel=1e-9)

    def test_lg012_prefactor_is_tiny(self, lg012):
        assert lg012.S0 == pytest.approx(1.25e-20, rel=0.05)

    def test_coupling_at_doughnut_radius(self, case_b):
        g, _ = coupling(case_b, np.array([case_b.lambda_g / 4.0, case_b.rho_max, 0.0]))
        assert float(g) == pytest.approx(TWO_PI * 30.0, rel=1e-3)

    def test_lg01_cavity_mode_matches_coupling(self):
        params = scenario_params("case-b-lg01-cavity")
        g, _ = coupling(params, np.array([params.lambda_g / 4.0, params.rho_max, 0.0]))
        assert float(g) == pytest.approx(TWO_PI * 30.0, rel=1e-3)

    def test_well_centers(self, case_b):
        centers = well_centers(case_b)
        assert centers.size == 30
        assert centers[4] == pytest.approx(2.25 * case_b.lambda_S)

    def test_trap_periods(self, case_b):
        axial = TWO_PI / axial_trap_frequency(case_b)
        radial = TWO_PI / radial_trap_frequency(case_b)
        assert 1.4 <= axial <= 2.6
        assert 50.0 <= radial <= 150.0


class TestGradients:
    @pytest.mark.parametrize("scenario", ["case-a", "case-b-LG012", "case-b-lg01-cavity"])
    def test_match_finite_differences(self, scenario):
        params = scenario_params(scenario)
        rng = np.random.default_rng(7)
        center = well_centers(params)[4]
        r = np.column_stack(
            [
                rng.uniform(center - 0.2, center + 0.2, 6),
                rng.uniform(-18.0, 18.0, 6),
                rng.uniform(-18.0, 18.0, 6),
            ]
        )
        h = 1e-4
        for field in (coupling, stark_shift):
            _, grad = field(params, r)
            scale = np.max(np.abs(grad))
            for axis in range(3):
                step = np.zeros(3)
                step[axis] = h
                numeric = (field(params, r + step)[0] - field(params, r - step)[0]) / (2.0 * h)
                assert np.max(np.abs(numeric - grad[:, axis])) < 1e-5 * scale

    def test_lg01_gradient_vanishes_on_axis(self):
        params = scenario_params("case-b-lg01-cavity")
        g, grad = coupling(params, np.array([0.3, 0.0, 0.0]))
        assert float(g) == 0.0
        assert np.all(np.isfinite(grad))
        assert grad[1] == 0.0 and grad[2] == 0.0

    def test_vectorized_shapes(self, case_a):
        r = np.zeros((4, 5, 3))
        point = field_point(case_a, r)
        assert point.g.shape == (4, 5)
        assert point.grad_S.shape == (4, 5, 3)


class TestIntensity:
    def test_stark_prefactor_consistent_with_intensity(self):
        P, alpha, m, W, k = 2.0, 0.3, 3, 10.0, 7.0
        rho, x = W * math.sqrt(m / 2.0), math.pi / (2.0 * k)
        S = stark_from_intensity(lg_intensity(rho, x, P, m, W, k), alpha)
        S0 = stark_prefactor(P, alpha, m, W)
        expected = S0 * rho ** (2 * m) * math.exp(-2.0 * rho ** 2 / W ** 2)
        assert float(S) == pytest.approx(expected, rel=1e-12)

    def test_rejects_bad_mode(self):
        with pytest.raises(InvalidArgumentError):
            lg_intensity(1.0, 0.0, 1.0, 0, 10.0, 7.0)


class TestDressed:
    def test_case_b_symmetric(self, case_b):
        r = antinode(case_b)
        plus, minus = dressed_detunings(case_b, r)
        g, _ = coupling(case_b, r)
        assert float(plus) == pytest.approx(abs(float(g)))
        assert float(minus) == pytest.approx(-abs(float(g)))

    def test_case_b_orders_branches_where_coupling_is_negative(self, case_b):
        # sin(k_g x) = −1 three quarters of a cavity wavelength along the axis
        r = np.array([0.75 * case_b.lambda_g, 0.0, 0.0])
        g, _ = coupling(case_b, r)
        assert float(g) < 0.0
        plus, minus = dressed_detunings(case_b, r)
        assert float(plus) == pytest.approx(-float(g))
        assert float(minus) == pytest.approx(float(g))

    def test_case_a_without_coupling(self, case_a):
        # on the cavity node sin(k_g x) = 0, leaving S ± |S|
        r = np.array([case_a.lambda_g / 2.0, case_a.rho_max, 0.0])
        S, _ = stark_shift(case_a, r)
        plus, minus = dressed_detunings(case_a, r)
        assert float(plus) == pytest.approx(2.0 * float(S), rel=1e-6)
        assert float(minus) == pytest.approx(0.0, abs=1e-6 * float(S))


class TestQuasiclassical:
    def test_recoil_ratios_pass(self, case_b):
        report = validate_quasiclassical(case_b, 0.15)
        assert report.recoil_passed
        assert report.recoil_gamma_ratio < 0.01

    def test_large_spread_fails_eps2(self, case_b):
        report = validate_quasiclassical(case_b, 5.0)
        assert "eps2" in report.failures
        assert not report.passed

    def test_zero_spread_fails_eps1(self, case_b):
        report = validate_quasiclassical(case_b, 0.0)
        assert "eps1" in report.failures

    def test_balance_spread_equalizes_epsilons(self, case_b):
        report = validate_quasiclassical(case_b, 0.15)
        balanced = validate_quasiclassical(case_b, report.balance_spread)
        assert balanced.eps1 == pytest.approx(balanced.eps2, rel=1e-12)
