"""Shared fixtures for the simulator test suite."""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from config import GridSection, RunConfig, get_settings, resolve_run, scenario_params  # noqa: E402
from services.coefficients import build_cache  # noqa: E402
from services.sde import HarmonicProvider  # noqa: E402


@pytest.fixture(scope="session")
def case_a():
    return scenario_params("case-a")


@pytest.fixture(scope="session")
def case_b():
    return scenario_params("case-b")


@pytest.fixture(scope="session")
def lg012():
    return scenario_params("case-b-LG012")


@pytest.fixture(scope="session")
def case_b_cache(case_b):
    """Smallest allowed grid; built once per session."""
    return build_cache(case_b, n_g=33, n_s=33, workers=1, verbose=False)


@pytest.fixture(scope="session")
def case_a_cache(case_a):
    return build_cache(case_a, n_g=33, n_s=33, workers=1, verbose=False)


@pytest.fixture(scope="session")
def default_grid():
    grid = GridSection()
    return grid.n_g, grid.n_s


@pytest.fixture(scope="session")
def case_a_default_cache(case_a, default_grid):
    """Production-size grid, built on every available worker."""
    n_g, n_s = default_grid
    return build_cache(case_a, n_g=n_g, n_s=n_s, workers=get_settings().workers, verbose=False)


@pytest.fixture(scope="session")
def case_b_default_cache(case_b, default_grid):
    n_g, n_s = default_grid
    return build_cache(case_b, n_g=n_g, n_s=n_s, workers=get_settings().workers, verbose=False)


@pytest.fixture
def harmonic(case_b):
    """Noisy harmonic well with constant coefficients."""
    return HarmonicProvider(case_b, gamma_xx=0.01, diffusion_xx=1e-4, spont_diffusion=1e-5)


@pytest.fixture
def run_factory(tmp_path):
    """Resolve a run for a scenario with section overrides."""

    def make(scenario: str = "case-b", **sections):
        config = RunConfig().with_overrides("physics", scenario=scenario)
        for section, values in sections.items():
            config = config.with_overrides(section, **values)
        return resolve_run(config)

    return make
