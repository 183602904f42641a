"""Tests for scenario presets, layered run resolution and settings."""

import math

import pytest
import yaml
from pydantic import ValidationError

from config import (
    RunConfig,
    Settings,
    dump_run_config,
    load_run_config,
    load_scenarios,
    resolve_run,
    scenario_params,
)
from exceptions import ConfigurationError

TWO_PI = 2.0 * math.pi


class TestPresets:
    def test_all_presets_load(self):
        names = set(load_scenarios())
        assert {"case-a", "case-b", "case-b-LG012", "case-b-intense", "case-b-lg01-cavity"} <= names
        assert not any(name.startswith("_") for name in names)

    @pytest.mark.parametrize("name,detuning", [("case-a", -10.0), ("case-b", -35.0)])
    def test_shared_rates_and_photon_number(self, name, detuning):
        params = scenario_params(name)
        assert params.gamma == pytest.approx(TWO_PI * 2.6)
        assert params.kappa == pytest.approx(TWO_PI * 4.0)
        assert params.delta_p == pytest.approx(TWO_PI * detuning)
        assert params.empty_cavity_photons == pytest.approx(0.01, rel=1e-3)
        assert params.n_max == 4

    def test_intense_preset_scales_peak_shift(self):
        assert scenario_params("case-b-intense").S_max == pytest.approx(TWO_PI * 400.0, rel=1e-9)

    def test_unknown_scenario(self):
        with pytest.raises(ConfigurationError) as exc_info:
            scenario_params("case-z")
        assert "case-a" in exc_info.value.details["available"]

    def test_peak_shift_override_replaces_prefactor(self):
        params = scenario_params("case-b", S_max_2pi=100.0)
        assert params.S_max == pytest.approx(TWO_PI * 100.0, rel=1e-12)

    def test_prefactor_override_replaces_peak_shift(self, lg012):
        params = scenario_params("case-b-LG012", S0=2.0 * lg012.S0)
        assert params.S_max == pytest.approx(2.0 * lg012.S_max, rel=1e-12)

    def test_invalid_override(self):
        with pytest.raises(ConfigurationError):
            scenario_params("case-b", kappa=-1.0)

    def test_params_are_frozen(self, case_b):
        with pytest.raises(ValidationError):
            case_b.kappa = 1.0


class TestResolution:
    def test_preset_sections_apply(self, run_factory):
        run = run_factory("case-a")
        assert run.sde.t_max == 200_000.0
        assert run.ensemble.survival_population == "trapped"

    def test_flags_beat_preset(self, run_factory):
        run = run_factory("case-a", sde={"t_max": 50.0}, ensemble={"survival_population": "all"})
        assert run.sde.t_max == 50.0
        assert run.ensemble.survival_population == "all"
        assert run.sde.dt == 0.005

    def test_none_overrides_are_ignored(self):
        config = RunConfig().with_overrides("sde", dt=None, t_max=None)
        assert "dt" not in config.sde.model_fields_set

    def test_invalid_override_is_a_configuration_error(self):
        with pytest.raises(ConfigurationError):
            RunConfig().with_overrides("grid", n_g=10)

    def test_escape_radius(self, run_factory):
        assert run_factory("case-b-LG012").escape_radius == 40.0
        run = run_factory("case-b")
        assert run.escape_radius == pytest.approx(2.0 * run.params.W_S)

    def test_scenario_hash_ignores_io(self, run_factory):
        a = run_factory("case-b", io={"timestamp": False})
        b = run_factory("case-b", io={"output_dir": "elsewhere"})
        assert a.scenario_hash() == b.scenario_hash()
        assert a.scenario_hash() != run_factory("case-b", sde={"dt": 0.004}).scenario_hash()


class TestConfigFiles:
    def test_file_layer(self, tmp_path):
        path = tmp_path / "run.yml"
        path.write_text(
            yaml.safe_dump({"physics": {"scenario": "case-a"}, "ensemble": {"n": 25, "master_seed": 9}}),
            encoding="utf-8",
        )
        run = resolve_run(load_run_config(str(path)).with_overrides("ensemble", n=30))
        assert run.scenario == "case-a"
        assert run.ensemble.n == 30
        assert run.ensemble.master_seed == 9

    def test_toml_file_layer(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text(
            '[physics]\nscenario = "case-a"\n\n[physics.overrides]\nkappa_2pi = 3.5\n\n'
            "[sde]\ndt = 0.004\n\n[ensemble]\nn = 25\nmaster_seed = 9\n",
            encoding="utf-8",
        )
        run = resolve_run(load_run_config(str(path)))
        assert run.scenario == "case-a"
        assert run.sde.dt == pytest.approx(0.004)
        assert run.ensemble.master_seed == 9
        assert run.params.kappa == pytest.approx(TWO_PI * 3.5)

    def test_malformed_toml(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[sde\ndt = 0.004\n", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_run_config(str(path))

    def test_unknown_key_is_rejected(self, tmp_path):
        path = tmp_path / "run.yml"
        path.write_text("sde:\n  step: 0.01\n", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_run_config(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError) as exc_info:
            load_run_config(str(tmp_path / "absent.yml"))
        assert "absent.yml" in exc_info.value.details["path"]

    def test_dumped_config_reproduces_run(self, run_factory, tmp_path):
        run = run_factory("case-b-LG012", sde={"dt": 0.004}, ensemble={"n": 12})
        path = tmp_path / "resolved.yml"
        path.write_text(dump_run_config(run), encoding="utf-8")
        again = resolve_run(load_run_config(str(path)))
        assert again.scenario_hash() == run.scenario_hash()
        assert again.params.S_max == pytest.approx(run.params.S_max, rel=1e-12)


class TestSettings:
    def test_environment_prefix(self, monkeypatch):
        monkeypatch.setenv("CAVITY_TRAP_WORKERS", "3")
        monkeypatch.setenv("CAVITY_TRAP_ENABLE_TIMING", "true")
        settings = Settings()
        assert settings.workers == 3
        assert settings.enable_timing

    def test_rejects_zero_workers(self, monkeypatch):
        monkeypatch.setenv("CAVITY_TRAP_WORKERS", "0")
        with pytest.raises(ValidationError):
            Settings()
