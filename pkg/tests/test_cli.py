import json
import subprocess
import sys
from dataclasses import fields

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ramplab import cli
from ramplab.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_SIM,
    compare_summaries,
    config_from_dict,
    emit_config,
    fmt,
    main,
    parse_config,
    parse_range,
    read_trajectory,
    trajectory_columns,
)
from ramplab.fd import FD1, FD2
from ramplab.scenarios import ConfigError, ScenarioConfig, scenario_config


def _write(path, obj):
    path.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def s4a_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("s4a")
    assert main(["run", "--scenario", "S4a", "--out", str(out)]) == EXIT_OK
    return out


class TestParseConfig:
    def test_empty_file_gives_default_s4a(self, tmp_path):
        cfg, raw = parse_config(_write(tmp_path / "c.json", ""))
        assert cfg == scenario_config("S4a") and raw == {}
        assert cfg.fd_before == FD1 and cfg.fd_after == FD2
        assert cfg.model.tau == pytest.approx(20 / 3600) and cfg.model.nu == 35.0
        assert (cfg.model.kappa, cfg.model.delta) == (13.0, 0.8)

    def test_empty_object(self, tmp_path):
        cfg, _ = parse_config(_write(tmp_path / "c.json", {}))
        assert cfg == scenario_config("S4a")

    def test_horizon_rule(self, tmp_path):
        with pytest.raises(ConfigError) as err:
            parse_config(_write(tmp_path / "c.json", {"horizon_steps": 1000}))
        assert err.value.field == "horizon_steps"

    def test_custom_allows_other_horizon(self, tmp_path):
        cfg, _ = parse_config(_write(tmp_path / "c.json", {"scenario": "custom", "horizon_steps": 1000, "switch_step": 500}))
        assert cfg.horizon_steps == 1000

    @pytest.mark.parametrize(
        "raw, field",
        [
            ({"K_r": -1}, "K_r"),
            ({"bogus": 1}, "bogus"),
            ({"fd_before": {"rho_cr": 29, "nope": 1}}, "fd_before.nope"),
            ({"setpoints": 33}, "setpoints"),
            ({"scenario": "S9"}, "scenario"),
        ],
    )
    def test_rejections_name_field(self, tmp_path, raw, field):
        with pytest.raises(ConfigError) as err:
            parse_config(_write(tmp_path / "c.json", raw))
        assert err.value.field == field
        assert field in str(err.value)

    def test_bad_json(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(_write(tmp_path / "c.json", "{not json"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "absent.json")

    @settings(max_examples=40, deadline=None)
    @given(
        sid=st.sampled_from(["S1", "S2", "S3a", "S3b", "S4a", "S4b", "S5a", "S5b"]),
        K_r=st.floats(0.01, 100),
        C_r=st.floats(0.01, 100),
        K_A=st.floats(0.1, 100),
        noise=st.floats(0, 0.2),
        seed=st.integers(0, 2**31),
    )
    def test_round_trip(self, sid, K_r, C_r, K_A, noise, seed):
        cfg = scenario_config(sid, K_r=K_r, C_r=C_r, K_A=K_A, noise_std=noise, seed=seed)
        back = config_from_dict(json.loads(emit_config(cfg)))
        assert back == cfg

    def test_round_trip_custom_demand(self, tmp_path):
        cfg = scenario_config("custom", horizon_steps=720, switch_step=360)
        back, _ = parse_config(_write(tmp_path / "c.json", emit_config(cfg)))
        assert back == cfg
        assert {f.name for f in fields(ScenarioConfig)} == set(json.loads(emit_config(cfg)))


class TestRun:
    def test_outputs_written(self, s4a_run):
        assert (s4a_run / "trajectory.csv").exists() and (s4a_run / "summary.json").exists()

    def test_summary_s4a(self, s4a_run):
        s = json.loads((s4a_run / "summary.json").read_text())
        assert s["status"] == "ok" and s["scenario"] == "S4a"
        assert s["improvement_pct"] > 0
        assert s["peak_ramp_queue_veh"] > 0
        assert set(s["convergence_min"]) == {"phase1", "phase2"}
        assert s["config"]["K_r"] == 10.0

    def test_s1_has_no_estimator_fields(self, tmp_path):
        assert main(["run", "--scenario", "S1", "--out", str(tmp_path)]) == EXIT_OK
        s = json.loads((tmp_path / "summary.json").read_text())
        assert s["improvement_pct"] == 0.0
        assert not {"convergence_min", "final_rho_star_hat", "final_q_star_hat"} & set(s)

    def test_overrides_echoed(self, tmp_path):
        cfg = _write(tmp_path / "c.json", {"scenario": "S4a", "K_A": 20})
        assert main(["run", "--config", cfg, "--seed", "7", "--out", str(tmp_path / "o")]) == EXIT_OK
        s = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert s["overrides"] == {"K_A": 20, "seed": 7}
        assert s["config"]["K_A"] == 20.0 and s["config"]["seed"] == 7

    def test_trajectory_columns(self, s4a_run):
        header, data = read_trajectory(s4a_run / "trajectory.csv")
        assert header == trajectory_columns(20)
        assert header[:3] == ["k", "t_min", "rho_1"] and header[-3:] == ["e1", "e2", "trace_gamma"]
        assert len(header) == 2 + 60 + 9
        assert data.shape == (1441, len(header))
        np.testing.assert_array_equal(data[:, 0], np.arange(1441))

    def test_csv_matches_memory(self, s4a_run):
        res = cli.run_scenario(scenario_config("S4a"))
        _, data = read_trajectory(s4a_run / "trajectory.csv")
        mem = cli.trajectory_matrix(res)
        expected = np.vectorize(lambda x: float(fmt(x)))(mem)
        np.testing.assert_array_equal(data, expected)
        np.testing.assert_allclose(data, mem, rtol=5e-9, atol=1e-300)

    def test_repeat_is_byte_identical(self, s4a_run, tmp_path):
        assert main(["run", "--scenario", "S4a", "--out", str(tmp_path)]) == EXIT_OK
        for name in ("trajectory.csv", "summary.json"):
            assert (tmp_path / name).read_bytes() == (s4a_run / name).read_bytes()

    def test_multiple_scenarios_get_subdirs(self, tmp_path):
        assert main(["run", "--scenario", "S1,S3a", "--out", str(tmp_path)]) == EXIT_OK
        assert (tmp_path / "S1" / "summary.json").exists() and (tmp_path / "S3a" / "trajectory.csv").exists()

    def test_plotdata(self, tmp_path):
        assert main(["run", "--scenario", "S2", "--emit", "plotdata", "--out", str(tmp_path)]) == EXIT_OK
        assert sorted(p.name for p in tmp_path.iterdir()) == ["plotdata.csv"]
        header, data = read_trajectory(tmp_path / "plotdata.csv")
        assert header == cli.PLOT_COLUMNS and data.shape == (1441, len(header))

    @pytest.mark.parametrize("argv", [["--emit", "nope"], ["--scenario", "S9"]])
    def test_config_errors(self, tmp_path, argv):
        assert main(["run", "--out", str(tmp_path), *argv]) == EXIT_CONFIG

    def test_bad_config_file_exit_code(self, tmp_path, capsys):
        cfg = _write(tmp_path / "c.json", {"K_r": -1})
        assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
        assert "K_r" in capsys.readouterr().err

    def test_unwritable_out(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["run", "--scenario", "S1", "--out", str(blocker / "sub")]) == EXIT_CONFIG

    def test_simulation_failure(self, tmp_path, monkeypatch):
        def boom(cfg, baseline_tts=None):
            raise cli.SimulationError("non-finite density or speed", 42)

        monkeypatch.setattr(cli, "run_scenario", boom)
        assert main(["run", "--scenario", "S4a", "--out", str(tmp_path)]) == EXIT_SIM
        s = json.loads((tmp_path / "summary.json").read_text())
        assert s["status"] == "failed" and "step 42" in s["error"]
        assert not (tmp_path / "trajectory.csv").exists()


class TestSweep:
    def test_two_by_two(self, tmp_path, s4a_run):
        rc = main(["sweep", "--kr-range", "9:10:1", "--cr-range", "2:3:1", "--out", str(tmp_path)])
        assert rc == EXIT_OK
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert len(lines) == 5 and lines[0] == "K_r,C_r,tts_veh_h,improvement_pct,status"
        row = next(l.split(",") for l in lines[1:] if l.startswith("10,2,"))
        s = json.loads((s4a_run / "summary.json").read_text())
        assert float(row[2]) == s["tts_veh_h"]
        assert row[4] == "ok"

    def test_default_grid(self):
        args = cli._build_parser().parse_args(["sweep"])
        kr, cr = parse_range(args.kr_range, "K_r"), parse_range(args.cr_range, "C_r")
        assert kr[0] <= 1 and kr[-1] >= 20 and cr[0] <= 1 and cr[-1] >= 9

    @pytest.mark.parametrize(
        "text, expected",
        [("1:3:1", [1.0, 2.0, 3.0]), ("1:2:0.5", [1.0, 1.5, 2.0]), ("0.1:0.3:0.1", [0.1, 0.2, 0.3]), ("5:5:1", [5.0])],
    )
    def test_parse_range(self, text, expected):
        assert parse_range(text, "K_r") == expected

    @pytest.mark.parametrize("text", ["1:3", "a:b:c", "3:1:1", "1:3:0"])
    def test_parse_range_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_range(text, "K_r")

    def test_bad_range_exit_code(self, tmp_path):
        assert main(["sweep", "--kr-range", "0:1:1", "--cr-range", "1:1:1", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_cells_flagged(self, tmp_path, monkeypatch):
        import ramplab.scenarios as sc

        real = sc.run_scenario

        def flaky(cfg, *a, **k):
            if cfg.C_r == 3.0:
                raise sc.SimulationError("boom", 1)
            return real(cfg, *a, **k)

        monkeypatch.setattr(sc, "run_scenario", flaky)
        rc = main(["sweep", "--kr-range", "10:10:1", "--cr-range", "2:3:1", "--out", str(tmp_path)])
        assert rc == EXIT_SIM
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[1].endswith(",ok") and lines[2] == "10,3,nan,nan,missing"


class TestCompare:
    @staticmethod
    def _summary(tmp_path, name, tts, sid, steps=1440):
        return _write(tmp_path / f"{name}.json", {"scenario": sid, "tts_veh_h": tts, "horizon_steps": steps, "T_h": 10 / 3600})

    @pytest.mark.parametrize("tts, expected", [(1741.0, 0.0), (1638.0, 5.9), (1647.0, 5.4)])
    def test_improvement_convention(self, tmp_path, tts, expected):
        base = self._summary(tmp_path, "b", 1741.0, "S1")
        other = self._summary(tmp_path, "o", tts, "X")
        assert main(["compare", base, other, "--out", str(tmp_path)]) == EXIT_OK
        lines = (tmp_path / "compare.csv").read_text().splitlines()
        assert lines[0] == "scenario,tts_veh_h,improvement_pct"
        assert round(float(lines[1].split(",")[2]), 1) == expected

    def test_mismatched_horizon(self, tmp_path):
        base = self._summary(tmp_path, "b", 1741.0, "S1")
        other = self._summary(tmp_path, "o", 900.0, "X", steps=720)
        assert main(["compare", base, other, "--out", str(tmp_path)]) == EXIT_CONFIG
        with pytest.raises(ConfigError):
            compare_summaries(json.loads(open(base).read()), [json.loads(open(other).read())])

    def test_real_summaries(self, tmp_path, s4a_run, capsys):
        assert main(["run", "--scenario", "S1", "--out", str(tmp_path / "s1")]) == EXIT_OK
        rc = main(["compare", str(tmp_path / "s1" / "summary.json"), str(s4a_run / "summary.json"), "--out", str(tmp_path)])
        assert rc == EXIT_OK
        s4a = json.loads((s4a_run / "summary.json").read_text())
        row = (tmp_path / "compare.csv").read_text().splitlines()[1].split(",")
        assert row[0] == "S4a" and float(row[2]) == pytest.approx(s4a["improvement_pct"], rel=1e-6)
        assert "S4a" in capsys.readouterr().out

    def test_unreadable(self, tmp_path):
        assert main(["compare", str(tmp_path / "x.json"), str(tmp_path / "y.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


class TestNoise:
    def test_writes_table(self, tmp_path):
        rc = main(["noise", "--noise-std", "0,0.05", "--n-seeds", "2", "--out", str(tmp_path)])
        assert rc == EXIT_OK
        lines = (tmp_path / "noise.csv").read_text().splitlines()
        assert lines[0] == "noise_std,mean_rho_star_hat,std_rho_star_hat,bias_pct,n_runs"
        assert len(lines) == 3
        zero = lines[1].split(",")
        assert float(zero[2]) < 1e-9 and zero[4] == "2"

    def test_same_seed_same_row(self, tmp_path):
        for d in ("a", "b"):
            main(["noise", "--noise-std", "0.02", "--n-seeds", "1", "--seed", "11", "--out", str(tmp_path / d)])
        assert (tmp_path / "a" / "noise.csv").read_bytes() == (tmp_path / "b" / "noise.csv").read_bytes()

    @pytest.mark.parametrize("std", ["-0.1", "x"])
    def test_bad_std(self, tmp_path, std):
        assert main(["noise", "--noise-std", std, "--n-seeds", "1", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "ramplab", "run", "--scenario", "S1", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "S1: TTS" in proc.stdout
