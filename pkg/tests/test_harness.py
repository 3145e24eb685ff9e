import json

import pytest

from cps_sentinel import cli
from cps_sentinel.detection import classify, rn_series
from cps_sentinel.harness import (
    AssumptionViolation,
    PRESETS,
    ValidationError,
    load_scenario,
    mdp_scenario_from_dict,
    preset,
    run_mdp_batch,
    run_montecarlo,
    scenario_from_dict,
)
from cps_sentinel.model import honest_influence_check
from cps_sentinel.numerics import split_seed
from cps_sentinel.simulator import simulate


LINEAR_PRESETS = ["identity", "replacement", "fdi", "dos", "mimic", "example1", "example2"]


def small(name, count=3, horizon=40):
    data = preset(name)
    data["seeds"]["count"] = count
    data["horizon"] = horizon
    return scenario_from_dict(data)


class TestPresets:
    @pytest.mark.parametrize("name", LINEAR_PRESETS)
    def test_linear_presets_validate(self, name):
        s = scenario_from_dict(preset(name))
        assert s.name == name
        assert s.model.n_agents == 2

    @pytest.mark.parametrize("name", ["mdp-detect", "mdp-mimic"])
    def test_mdp_presets_validate(self, name):
        s = mdp_scenario_from_dict(preset(name))
        assert s.mdp.n_states == 2

    def test_example1_influence_fails(self):
        s = scenario_from_dict(preset("example1"))
        holds, unreachable = honest_influence_check(s.model, s.attack[0])
        assert not holds and unreachable == frozenset({1})

    def test_example2_influence_passes(self):
        s = scenario_from_dict(preset("example2"))
        holds, unreachable = honest_influence_check(s.model, s.attack[0])
        assert holds and not unreachable

    def test_unknown_preset_rejected(self):
        with pytest.raises(KeyError):
            preset("nope")


class TestScenarioValidation:
    def test_load_scenario_from_file(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps(preset("example2")))
        s = load_scenario(path)
        assert s.name == "example2" and s.horizon == 100

    def test_load_scenario_parse_error(self, tmp_path):
        from cps_sentinel.harness import ParseError
        path = tmp_path / "bad.json"
        path.write_text("[1, 2")
        with pytest.raises(ParseError):
            load_scenario(path)
        with pytest.raises(ParseError):
            load_scenario(tmp_path / "missing.json")

    def test_bad_process_noise_names_the_field(self):
        data = preset("identity")
        data["model"]["process_noise"] = [[1.0, 2.0], [2.0, 1.0]]
        with pytest.raises(ValidationError) as err:
            scenario_from_dict(data)
        assert any(v.path == "model.process_noise" for v in err.value.issues)

    def test_multiple_issues_reported_together(self):
        data = preset("identity")
        data["model"]["process_noise"] = [[1.0, 2.0], [2.0, 1.0]]
        data["horizon"] = 0
        with pytest.raises(ValidationError) as err:
            scenario_from_dict(data)
        paths = {v.path for v in err.value.issues}
        assert "horizon" in paths

    def test_attack_parameter_sizes_checked(self):
        data = preset("fdi")
        data["attack"]["offsets"] = [0.2, 0.3]
        with pytest.raises(ValidationError) as err:
            scenario_from_dict(data)
        assert any(v.path == "attack.offsets" for v in err.value.issues)

    def test_missing_threshold_reported(self):
        data = preset("identity")
        del data["threshold"]
        with pytest.raises(ValidationError):
            scenario_from_dict(data)

    def test_honest_gain_shape_checked(self):
        data = preset("identity")
        data["honest"] = {"kind": "linear", "gain": [[1.0]]}
        with pytest.raises(ValidationError) as err:
            scenario_from_dict(data)
        assert any(v.path == "honest.gain" for v in err.value.issues)

    def test_fdi_schedule_length_checked(self):
        data = preset("fdi")
        data["attack"]["offsets"] = [[0.2]] * 10  # shorter than the horizon
        with pytest.raises(ValidationError) as err:
            scenario_from_dict(data)
        assert any(v.code == "ScheduleTooShort" for v in err.value.issues)

    @pytest.mark.parametrize("honest", [
        {"kind": "zero"},
        {"kind": "affine", "gain": [[0.1, 0.0], [0.0, 0.1]], "offset": [1.0, -1.0]},
        {"kind": "window", "lag_gains": [[[1.0, 0.0], [0.0, 1.0]],
                                         [[0.5, 0.0], [0.0, 0.5]]]},
    ])
    def test_honest_policy_kinds_parse(self, honest):
        data = preset("identity")
        data["honest"] = honest
        s = scenario_from_dict(data)
        summary = run_montecarlo(s)
        assert summary.detection_fraction == 0.0

    @pytest.mark.parametrize("attack", [
        {"malicious_set": [1], "kind": "replacement", "mode": "sign_flip"},
        {"malicious_set": [1], "kind": "replacement", "mode": "constant",
         "values": [0.3]},
        {"malicious_set": [1], "kind": "dos"},
    ])
    def test_attack_kinds_parse_and_run(self, attack):
        data = preset("example2")
        data["attack"] = attack
        data["seeds"]["count"] = 2
        data["horizon"] = 30
        summary = run_montecarlo(scenario_from_dict(data))
        assert summary.n_runs == 2


class TestRunMontecarlo:
    def test_single_run_matches_manual_composition(self):
        s = small("replacement", count=1, horizon=60)
        summary = run_montecarlo(s)
        seed = split_seed(s.seed_base, 0)
        traj = simulate(s.model, s.honest, s.attack, s.horizon, seed)
        series = rn_series(traj, s.model, s.honest, s.attack[1], s.attack[0])
        row = summary.rows[0]
        assert row["seed"] == seed
        assert row["log_l"] == series.log_l_at(s.horizon)
        assert row["r_n"] == float(series.r_n[-1])
        assert row["decision"] == classify(series, s.horizon, s.threshold).value

    def test_no_attack_identity_gives_zero_stat(self):
        s = small("identity", count=4, horizon=50)
        summary = run_montecarlo(s)
        assert summary.detection_fraction == 0.0
        assert all(row["log_l"] == 0.0 for row in summary.rows)

    def test_mimic_never_detected(self):
        s = small("mimic", count=4, horizon=50)
        summary = run_montecarlo(s)
        assert summary.detection_fraction == 0.0

    def test_replacement_detects(self):
        s = small("replacement", count=20, horizon=120)
        summary = run_montecarlo(s)
        assert summary.detection_fraction >= 0.95
        assert summary.mean_drift < 0.0

    def test_refuses_assumption_violation_without_override(self):
        s = small("example1")
        with pytest.raises(AssumptionViolation):
            run_montecarlo(s)
        summary = run_montecarlo(s, override_assumption2=True)
        assert summary.n_runs == s.seed_count

    def test_outputs_are_byte_identical_across_reruns(self, tmp_path):
        s = small("replacement", count=3, horizon=30)
        dir_a, dir_b = tmp_path / "a", tmp_path / "b"
        run_montecarlo(s, out_dir=dir_a)
        run_montecarlo(s, out_dir=dir_b)
        for name in ("run_00000.csv", "run_00001.csv", "run_00002.csv", "runs.csv"):
            assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes()
        sa = json.loads((dir_a / "summary.json").read_text())
        sb = json.loads((dir_b / "summary.json").read_text())
        sa.pop("runtime_seconds"), sb.pop("runtime_seconds")
        assert sa == sb

    def test_parallel_matches_serial(self, tmp_path):
        s = small("fdi", count=6, horizon=30)
        serial = run_montecarlo(s, out_dir=tmp_path / "serial")
        parallel = run_montecarlo(s, max_workers=4, out_dir=tmp_path / "parallel")
        a = serial.summary_dict()
        b = parallel.summary_dict()
        a.pop("runtime_seconds"), b.pop("runtime_seconds")
        assert a == b
        for i in range(6):
            name = f"run_{i:05d}.csv"
            assert (tmp_path / "serial" / name).read_bytes() == \
                (tmp_path / "parallel" / name).read_bytes()

    def test_summary_json_keys_exact(self, tmp_path):
        s = small("identity", count=2, horizon=20)
        run_montecarlo(s, out_dir=tmp_path)
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert set(summary) == {"scenario", "n_runs", "horizon", "threshold",
                                "detection_fraction", "mean_drift", "drift_stderr",
                                "runtime_seconds"}

    def test_per_seed_errors_recorded_without_aborting(self):
        data = preset("identity")
        data["model"]["dynamics"] = [[10.0, 0.0], [0.0, 10.0]]  # wildly unstable
        data["horizon"] = 500
        data["seeds"]["count"] = 2
        s = scenario_from_dict(data)
        summary = run_montecarlo(s)
        assert all(r["error"] is not None and "NonFiniteState" in r["error"]
                   for r in summary.rows)


class TestMdpBatch:
    def test_detect_pair_batch(self, tmp_path):
        data = preset("mdp-detect")
        data["seeds"]["count"] = 5
        data["horizon"] = 500
        s = mdp_scenario_from_dict(data)
        summary = run_mdp_batch(s, out_dir=tmp_path)
        assert summary["analytic_drift"] < 0.0
        assert (tmp_path / "summary.json").exists()
        assert (tmp_path / "run_00004.csv").exists()

    def test_mimic_pair_flat_series(self):
        data = preset("mdp-mimic")
        data["seeds"]["count"] = 2
        data["horizon"] = 200
        s = mdp_scenario_from_dict(data)
        summary = run_mdp_batch(s)
        assert summary["analytic_drift"] == 0.0
        assert summary["mean_drift"] == 0.0


class TestCli:
    def write_preset(self, tmp_path, name, **tweak):
        data = preset(name)
        for key, value in tweak.items():
            data[key] = value
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(data))
        return path

    def test_preset_roundtrip(self, tmp_path, capsys):
        out = tmp_path / "p.json"
        assert cli.main(["preset", "replacement", "--out", str(out)]) == 0
        data = json.loads(out.read_text())
        assert data["name"] == "replacement"

    def test_check_valid_scenario(self, tmp_path, capsys):
        path = self.write_preset(tmp_path, "example2")
        assert cli.main(["check", str(path)]) == 0
        assert "influence check: holds" in capsys.readouterr().out

    def test_check_reports_failed_influence(self, tmp_path, capsys):
        path = self.write_preset(tmp_path, "example1")
        assert cli.main(["check", str(path)]) == 0
        out = capsys.readouterr().out
        assert "fails" in out and "[1]" in out

    def test_parse_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert cli.main(["check", str(bad)]) == 1

    def test_validation_error_exit_code(self, tmp_path):
        data = preset("identity")
        data["model"]["process_noise"] = [[1.0, 2.0], [2.0, 1.0]]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(data))
        assert cli.main(["montecarlo", str(path)]) == 1

    def test_montecarlo_refusal_and_override(self, tmp_path, capsys):
        path = self.write_preset(tmp_path, "example1",
                                 seeds={"base": 1, "count": 2}, horizon=20)
        assert cli.main(["montecarlo", str(path), "--out", str(tmp_path / "o")]) == 1
        assert cli.main(["montecarlo", str(path), "--override-assumption2",
                         "--out", str(tmp_path / "o2")]) == 0

    def test_simulate_writes_csv(self, tmp_path):
        path = self.write_preset(tmp_path, "identity", horizon=10)
        out = tmp_path / "traj.csv"
        assert cli.main(["simulate", str(path), "--out", str(out), "--seed", "7"]) == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0].startswith("t,x_1")
        assert len(lines) == 12

    def test_detect_emits_summary(self, tmp_path, capsys):
        path = self.write_preset(tmp_path, "replacement", horizon=50,
                                 seeds={"base": 1, "count": 1})
        out = tmp_path / "series.csv"
        assert cli.main(["detect", str(path), "--out", str(out)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["decision"] == "attack"
        assert out.read_text().startswith("t,logL,r_n")

    def test_numeric_error_exit_code(self, tmp_path):
        data = preset("identity")
        data["model"]["dynamics"] = [[10.0, 0.0], [0.0, 10.0]]
        data["horizon"] = 500
        path = tmp_path / "unstable.json"
        path.write_text(json.dumps(data))
        assert cli.main(["simulate", str(path)]) == 2

    def test_env_seed_override(self, tmp_path, monkeypatch, capsys):
        path = self.write_preset(tmp_path, "identity", horizon=10)
        out1 = tmp_path / "a.csv"
        out2 = tmp_path / "b.csv"
        monkeypatch.setenv("CPS_SENTINEL_SEED", "99")
        assert cli.main(["simulate", str(path), "--out", str(out1)]) == 0
        monkeypatch.delenv("CPS_SENTINEL_SEED")
        assert cli.main(["simulate", str(path), "--out", str(out2),
                         "--seed", str(split_seed(99, 0))]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_mdp_subcommand(self, tmp_path, capsys):
        data = preset("mdp-detect")
        data["seeds"]["count"] = 3
        data["horizon"] = 200
        path = tmp_path / "mdp.json"
        path.write_text(json.dumps(data))
        assert cli.main(["mdp", str(path)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["n_runs"] == 3

    def test_cli_reruns_are_byte_identical(self, tmp_path):
        path = self.write_preset(tmp_path, "fdi", horizon=25,
                                 seeds={"base": 3, "count": 2})
        for d in ("r1", "r2"):
            assert cli.main(["montecarlo", str(path), "--out", str(tmp_path / d)]) == 0
        for name in ("run_00000.csv", "run_00001.csv", "runs.csv"):
            assert (tmp_path / "r1" / name).read_bytes() == \
                (tmp_path / "r2" / name).read_bytes()


def test_all_presets_have_builders():
    assert set(PRESETS) == {"identity", "replacement", "fdi", "dos", "mimic",
                            "example1", "example2", "mdp-detect", "mdp-mimic"}
