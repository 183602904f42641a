"""Invariant suite behind the ``validate`` command."""

from __future__ import annotations

import math
from typing import Callable, List, Optional

import numpy as np

from config import PhysicalParams, ResolvedRun, scenario_params
from exceptions import CavityTrapError
from schemas import ValidationCheck
from services.coefficients import (
    BLOCH_FIELDS,
    ODD_FIELDS,
    CoefficientCache,
    CoefficientProvider,
    DirectBlochSource,
    bloch_point,
    interpolation_errors,
)
from services.ensemble import InitialConditionSpec, initial_rng, sample_initial
from services.fields import (
    axial_trap_frequency,
    coupling,
    radial_trap_frequency,
    stark_shift,
    well_centers,
)
from services.hilbert import (
    build_operators,
    correlation_chi,
    correlation_pairs,
    correlation_xi,
    liouvillian_at,
    oracle_correlations,
    steady_state,
    vec,
)
from services.sde import (
    HarmonicProvider,
    NoiseSwitches,
    WienerStream,
    frozen_oscillator,
    simulate_batch,
    well_spec,
)
from services.survival import survival_and_fit
from utils.output import log

TWO_PI = 2.0 * math.pi
ORACLE_TOL = 1e-4
CACHE_TOL = 1e-3
FD_TOL = 1e-5


def _relative(actual: float, expected: float) -> float:
    return abs(actual - expected) / abs(expected)


class ValidationSuite:
    """
    Property checks across every module; no Monte Carlo ensembles.

    Each check yields a ValidationCheck. A check that raises a simulator
    error is recorded as failed with the error message as detail.
    """

    def __init__(
        self,
        run: ResolvedRun,
        cache: Optional[CoefficientCache] = None,
        oracle_points: int = 20,
        seed: int = 0,
        verbose: bool = True,
    ):
        self.run = run
        self.params = run.params
        self.cache = cache
        self.oracle_points = oracle_points
        self.rng = np.random.default_rng(seed)
        self.verbose = verbose

    def _random_points(self, count: int, params: Optional[PhysicalParams] = None):
        params = params or self.params
        g = self.rng.uniform(-params.g0, params.g0, count)
        S = self.rng.uniform(0.0, params.S_max, count)
        return list(zip(g, S))

    def run_all(self) -> List[ValidationCheck]:
        checks: List[tuple] = [
            ("hilbert", "operator_algebra", self.check_operators),
            ("hilbert", "empty_cavity_photons", self.check_empty_cavity),
            ("hilbert", "steady_state_properties", self.check_steady_states),
            ("hilbert", "oracle_equivalence", self.check_oracle),
            ("fields", "geometry_constants", self.check_geometry),
            ("fields", "gradients_vs_finite_difference", self.check_gradients),
            ("fields", "trap_periods", self.check_trap_periods),
            ("coefficients", "parity", self.check_parity),
            ("coefficients", "friction_signatures", self.check_friction_signatures),
            ("coefficients", "case_b_fort_independence", self.check_case_b_independence),
            ("coefficients", "cache_interpolation", self.check_cache),
            ("sde", "frozen_potential_energy_drift", self.check_energy_drift),
            ("sde", "seed_reproducibility", self.check_reproducibility),
            ("ensemble", "survival_fit_sanity", self.check_survival),
        ]
        results = []
        for module, name, check in checks:
            result = self._guarded(module, name, check)
            if self.verbose:
                status = "PASS" if result.passed else "FAIL"
                log("VALIDATE", f"{module}.{name}: {status} {result.detail}")
            results.append(result)
        return results

    @staticmethod
    def _guarded(module: str, name: str, check: Callable[[], tuple]) -> ValidationCheck:
        try:
            passed, detail = check()
        except CavityTrapError as e:
            passed, detail = False, f"{type(e).__name__}: {e.message}"
        return ValidationCheck(module=module, name=name, passed=bool(passed), detail=detail)

    # ------ hilbert ------

    def check_operators(self):
        ops = build_operators(self.params.n_max)
        commutator = ops.a @ ops.a_dag - ops.a_dag @ ops.a
        # truncation breaks [a, a†] = 1 only on the top Fock level
        n = self.params.n_max + 1
        expected = np.eye(ops.dim)
        for atom in range(2):
            expected[atom * n + n - 1, atom * n + n - 1] = -self.params.n_max
        ok_a = np.allclose(commutator, expected)
        ok_sigma = np.allclose(ops.sigma @ ops.sigma, 0) and np.allclose(
            ops.sigma_dag @ ops.sigma + ops.sigma @ ops.sigma_dag, ops.identity
        )
        ok_herm = np.allclose(ops.Phi, ops.Phi.conj().T) and np.allclose(ops.Psi, ops.Psi.conj().T)
        return ok_a and ok_sigma and ok_herm, f"[a,a†] {ok_a}, σ algebra {ok_sigma}, Φ/Ψ Hermitian {ok_herm}"

    def check_empty_cavity(self):
        ops = build_operators(self.params.n_max)
        photons = steady_state(liouvillian_at(self.params, 0.0, 0.0)).photon_number(ops)
        error = _relative(photons, self.params.empty_cavity_photons)
        return error < 1e-6, f"<a†a>={photons:.8e}, relative error {error:.2e}"

    def check_steady_states(self):
        worst_residual = 0.0
        worst_eigen = 0.0
        worst_trace = 0.0
        for g, S in self._random_points(10):
            L = liouvillian_at(self.params, g, S)
            eta = steady_state(L)
            worst_residual = max(worst_residual, float(np.max(np.abs(L.matrix @ vec(eta.matrix)))))
            worst_eigen = min(worst_eigen, eta.min_eigenvalue())
            worst_trace = max(worst_trace, L.trace_defect())
        passed = worst_residual < 1e-10 and worst_eigen >= -1e-10 and worst_trace < 1e-9
        detail = f"residual {worst_residual:.2e}, min eigenvalue {worst_eigen:.2e}, trace defect {worst_trace:.2e}"
        return passed, detail

    def check_oracle(self):
        ops = build_operators(self.params.n_max)
        worst = 0.0
        for g, S in self._random_points(self.oracle_points):
            L = liouvillian_at(self.params, g, S)
            eta = steady_state(L)
            oracle = oracle_correlations(L, eta, ops, self.params)
            exact = {}
            for suffix, A, B in correlation_pairs(ops):
                exact[f"chi_{suffix}"] = correlation_chi(L, eta, A, B)
                exact[f"xi_{suffix}"] = correlation_xi(L, eta, A, B)
            scale = max(abs(v) for v in exact.values())
            for key, value in exact.items():
                floor = max(abs(value), 1e-3 * scale)
                worst = max(worst, abs(value - oracle[key]) / floor)
        return worst < ORACLE_TOL, f"{self.oracle_points} points, worst relative error {worst:.2e}"

    # ------ fields ------

    def check_geometry(self):
        failures = []
        for name in ("case-b", "case-b-LG012"):
            params = scenario_params(name)
            r = np.array([well_centers(params)[4], params.rho_max, 0.0])
            S, _ = stark_shift(params, r)
            if _relative(float(S), TWO_PI * 50.0) > 1e-3:
                failures.append(f"{name} S={float(S):.6g}")
        rho_error = _relative(self.params.rho_max, 14.14)
        if rho_error > 5e-3:
            failures.append(f"rho_max={self.params.rho_max:.6g}")
        g, _ = coupling(self.params, np.array([self.params.lambda_g / 4.0, self.params.rho_max, 0.0]))
        if self.params.cavity_mode == "gaussian" and _relative(float(g), TWO_PI * 30.0) > 1e-3:
            failures.append(f"g={float(g):.6g}")
        return not failures, ", ".join(failures) or f"rho_max={self.params.rho_max:.6g}"

    def check_gradients(self):
        h = 1e-4
        center = well_centers(self.params)[self.run.ensemble.well_index - 1]
        r = np.column_stack(
            [
                self.rng.uniform(center - 0.2, center + 0.2, 8),
                self.rng.uniform(-18.0, 18.0, 8),
                self.rng.uniform(-18.0, 18.0, 8),
            ]
        )
        worst = 0.0
        for field in (coupling, stark_shift):
            _, grad = field(self.params, r)
            scale = float(np.max(np.abs(grad)))
            for axis in range(3):
                step = np.zeros(3)
                step[axis] = h
                plus, _ = field(self.params, r + step)
                minus, _ = field(self.params, r - step)
                numeric = (plus - minus) / (2.0 * h)
                worst = max(worst, float(np.max(np.abs(numeric - grad[:, axis]))) / scale)
        return worst < FD_TOL, f"worst scaled error {worst:.2e}"

    def check_trap_periods(self):
        axial = TWO_PI / axial_trap_frequency(self.params)
        radial = TWO_PI / radial_trap_frequency(self.params)
        passed = 1.4 <= axial <= 2.6 and 50.0 <= radial <= 150.0
        return passed, f"axial {axial:.3f} μs, radial {radial:.1f} μs"

    # ------ coefficients ------

    def check_parity(self):
        ops = build_operators(self.params.n_max)
        worst = 0.0
        for g, S in self._random_points(3):
            g = abs(g)
            plus = bloch_point(g, S, self.params, ops)
            minus = bloch_point(-g, S, self.params, ops)
            for name in BLOCH_FIELDS:
                sign = -1.0 if name in ODD_FIELDS else 1.0
                a, b = getattr(plus, name), getattr(minus, name)
                worst = max(worst, abs(b - sign * a) / max(abs(a), 1e-12))
        return worst < 1e-8, f"worst relative defect {worst:.2e}"

    def _axial_friction(self, params: PhysicalParams, points: int = 40) -> np.ndarray:
        x = np.linspace(0.0, 2.5, points) * params.lambda_S
        r = np.stack([x, np.full(points, params.rho_max), np.zeros(points)], axis=-1)
        provider = CoefficientProvider(params, DirectBlochSource(params))
        return provider.local(r)

    def check_friction_signatures(self):
        gamma_a = self._axial_friction(scenario_params("case-a")).gamma_xx
        gamma_b = self._axial_friction(scenario_params("case-b")).gamma_xx
        has_negative = bool(np.any(gamma_a < 0))
        non_negative = bool(np.all(gamma_b >= -1e-12 * np.max(np.abs(gamma_b))))
        return has_negative and non_negative, (
            f"case a min Γ_xx {gamma_a.min():.3e}, case b min Γ_xx {gamma_b.min():.3e}"
        )

    def check_case_b_independence(self):
        base = scenario_params("case-b")
        perturbed = base.model_copy(update={"S0": base.S0 * 1.1})
        c0 = self._axial_friction(base, 12)
        c1 = self._axial_friction(perturbed, 12)
        gamma_diff = float(np.max(np.abs(c0.gamma_xx - c1.gamma_xx)) / np.max(np.abs(c0.gamma_xx)))
        diff_diff = float(np.max(np.abs(c0.diffusion_xx - c1.diffusion_xx)) / np.max(np.abs(c0.diffusion_xx)))
        return max(gamma_diff, diff_diff) < 1e-9, f"Γ_xx change {gamma_diff:.2e}, D_xx change {diff_diff:.2e}"

    def check_cache(self):
        if self.cache is None:
            return True, "skipped (cache disabled)"
        errors = interpolation_errors(self.cache, self.params, points=50, seed=int(self.rng.integers(1 << 31)))
        name = max(errors, key=errors.get)
        return errors[name] < CACHE_TOL, f"50 points, worst relative error {errors[name]:.2e} ({name})"

    # ------ sde ------

    def check_energy_drift(self):
        oscillator = frozen_oscillator(self.params, self.run.sde.dt)
        detail = (
            f"drift {oscillator.drift_per_ms:.2e}/ms, excursion {oscillator.excursion:.2e}, "
            f"{oscillator.steps_per_period:.0f} steps/period"
        )
        return oscillator.stable, detail

    def check_reproducibility(self):
        """Same seeds give identical paths whether run alone or in a batch."""
        params = self.params
        harmonic = HarmonicProvider(params, self.run.ensemble.well_index, 0.01, 1e-4, 1e-5)
        well = well_spec(params, self.run.ensemble.well_index)
        spec = InitialConditionSpec()
        seed = self.run.ensemble.master_seed
        initials = [sample_initial(spec, params, initial_rng(seed, i)) for i in range(3)]

        def batch(indices):
            return simulate_batch(
                [initials[i] for i in indices],
                [WienerStream(seed, i, 64) for i in indices],
                well,
                harmonic,
                self.run.sde.dt,
                5.0,
                switches=NoiseSwitches(),
                stride=100,
            )

        together = batch([0, 1, 2])
        alone = batch([1])[0]
        again = batch([0, 1, 2])
        same_batch = all(np.array_equal(a.positions, b.positions) for a, b in zip(together, again))
        same_alone = np.array_equal(together[1].positions, alone.positions)
        return same_batch and same_alone, f"repeat identical {same_batch}, batch-independent {same_alone}"

    # ------ ensemble ------

    def check_survival(self):
        fit = survival_and_fit([1.0, 3.0], [False, False], bootstrap_resamples=50)
        return abs(fit.tau_mle - 2.0) < 1e-4, f"τ_mle of {{1, 3}} = {fit.tau_mle:.6g}"

