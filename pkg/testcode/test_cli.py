"""End-to-end tests of the command-line dispatcher."""

import pytest

from config import load_run_config, resolve_run
from main import dispatch

FAST = ["--no-cache", "--no-timestamp", "--quiet"]


def data_lines(text: str):
    return [line for line in text.splitlines() if line and not line.startswith("#")]


class TestUsage:
    @pytest.mark.parametrize("argv", [[], ["teleport"], ["steady", "--g", "abc", "--S", "1"]])
    def test_usage_errors(self, argv, capsys):
        assert dispatch(argv) == 2

    def test_help_is_success(self, capsys):
        assert dispatch(["--help"]) == 0
        assert "steady" in capsys.readouterr().out

    def test_steady_needs_a_point(self, capsys):
        assert dispatch(["steady", "--g", "100"]) == 2
        assert "--x" in capsys.readouterr().err


class TestDomainErrors:
    def test_unknown_scenario(self, capsys):
        assert dispatch(["steady", "--scenario", "case-z", "--g", "1", "--S", "1"] + FAST) == 1
        assert "ConfigurationError" in capsys.readouterr().err

    def test_grid_below_minimum(self, capsys):
        assert dispatch(["dressed", "--grid", "10"] + FAST) == 1

    def test_bad_radius(self, capsys):
        assert dispatch(["dressed", "--rho", "wide"] + FAST) == 1
        assert "InvalidArgumentError" in capsys.readouterr().err


class TestSteady:
    def test_report_file(self, tmp_path):
        out = tmp_path / "steady.txt"
        argv = ["steady", "--scenario", "case-a", "--g", "100", "--S", "50", "--output", str(out)] + FAST
        assert dispatch(argv) == 0
        text = out.read_text(encoding="utf-8")
        assert "# scenario=case-a" in text
        assert "# generated" not in text
        for key in ("photon_number", "exp_ee", "chi_gg", "xi_SS", "residual", "truncation_converged"):
            assert f"{key}: " in text

    def test_output_is_bit_stable(self, capsys):
        argv = ["steady", "--scenario", "case-b", "--x", "2.2", "--rho", "max"] + FAST
        assert dispatch(argv) == 0
        first = capsys.readouterr().out
        assert dispatch(argv) == 0
        assert capsys.readouterr().out == first

    def test_timestamp_line_by_default(self, capsys):
        assert dispatch(["steady", "--g", "10", "--S", "10", "--no-cache", "--quiet"]) == 0
        assert capsys.readouterr().out.startswith("# generated=")


class TestScans:
    def test_dressed_table(self, capsys):
        assert dispatch(["dressed", "--scenario", "case-a", "--points", "5"] + FAST) == 0
        out = capsys.readouterr().out
        assert "# probe_detuning=" in out
        lines = data_lines(out)
        assert lines[0] == "x_over_lambda_S,delta_plus,delta_minus"
        assert len(lines) == 6
        assert lines[1].startswith("0.00000000e+00,")

    def test_coefficient_table(self, capsys):
        assert dispatch(["coeffs", "--scenario", "case-b", "--points", "4"] + FAST) == 0
        lines = data_lines(capsys.readouterr().out)
        assert lines[0] == "x_over_lambda_S,gamma_xx,D_xx_over_M2,force_over_M,force_x_over_M"
        assert len(lines) == 5
        assert all(len(line.split(",")) == 5 for line in lines)
        for line in lines[1:]:
            magnitude, axial = (float(v) for v in line.split(",")[3:])
            assert magnitude >= abs(axial) * (1.0 - 1e-8)


class TestTrajectories:
    def test_simulate_table(self, tmp_path):
        out = tmp_path / "trajectory.csv"
        argv = [
            "simulate", "--scenario", "case-b", "--incidence", "tangential", "--t-max", "0.2",
            "--seed", "3", "--index", "2", "--output", str(out),
        ] + FAST
        assert dispatch(argv) == 0
        text = out.read_text(encoding="utf-8")
        assert "# seed=3:2" in text
        assert "# escape_kind=max-time" in text
        assert data_lines(text)[0] == "t,x,y,z,vx,vy,vz,rho"

    def test_short_probe_is_not_certified(self, capsys):
        argv = ["simulate", "--scenario", "case-b", "--probe", "--horizon", "0.05"] + FAST
        assert dispatch(argv) == 1
        assert "stable: false" in capsys.readouterr().out

    def test_ensemble_outputs(self, tmp_path, capsys):
        argv = [
            "ensemble", "--scenario", "case-b", "--n", "2", "--t-max", "0.2", "--workers", "1",
            "--output-dir", str(tmp_path),
        ] + FAST
        assert dispatch(argv) == 0
        folder = tmp_path / "case-b"
        trajectories = data_lines((folder / "trajectories.csv").read_text(encoding="utf-8"))
        assert trajectories[0] == "index,seed,T_ms,vx_rms_cm_s,escape_kind,censored"
        assert len(trajectories) == 3
        report = (folder / "report.txt").read_text(encoding="utf-8")
        assert "censored_n: 2" in report
        assert "tau_mle_ms: none" in report
        assert (folder / "survival.csv").exists()


class TestDumpConfig:
    def test_dump_reproduces_run(self, tmp_path):
        dumped = tmp_path / "resolved.yml"
        argv = ["coeffs", "--scenario", "case-b-LG012", "--dt", "0.004", "--n", "17", "--dump-config", str(dumped)]
        assert dispatch(argv) == 0
        run = resolve_run(load_run_config(str(dumped)))
        assert run.scenario == "case-b-LG012"
        assert run.sde.dt == 0.004
        assert run.ensemble.n == 17

        again = tmp_path / "again.yml"
        assert dispatch(["coeffs", "--config", str(dumped), "--dump-config", str(again)]) == 0
        assert again.read_text(encoding="utf-8") == dumped.read_text(encoding="utf-8")

    def test_dump_to_stdout(self, capsys):
        assert dispatch(["steady", "--g", "1", "--S", "1", "--dump-config", "-"]) == 0
        assert "physics:" in capsys.readouterr().out
