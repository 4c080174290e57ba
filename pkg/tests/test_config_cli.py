import json
import os
import shutil

import numpy as np
import pytest
import yaml

from whmc import cli, pipeline
from whmc.config import dbm_to_mw, load_config, parse_config
from whmc.errors import ConfigError

CASE_STUDY = os.path.join(os.path.dirname(__file__), "..", "configs",
                          "case_study.yaml")


@pytest.fixture(scope="module")
def case_cfg():
    return load_config(CASE_STUDY)


def write_variant(tmp_path, mutate, name="cfg.yaml"):
    with open(CASE_STUDY) as fh:
        data = yaml.safe_load(fh)
    mutate(data)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


class TestConfig:
    def test_loads_case_study(self, case_cfg):
        assert case_cfg.links["sc"].distance_m == 40.0
        assert case_cfg.links["sh"].distance_m == 45.0
        assert case_cfg.harq.max_attempts == 3
        assert case_cfg.gains.alpha_hm == 0.5271

    def test_dbm_conversion_happens_once(self, case_cfg):
        assert case_cfg.links["sc"].tx_power_mw == \
            pytest.approx(dbm_to_mw(23.0))
        assert dbm_to_mw(23.0) == pytest.approx(199.5262314968879)
        assert case_cfg.links["sc"].carrier_freq_hz == 915e6

    def test_unknown_key_rejected(self, tmp_path):
        path = write_variant(tmp_path,
                             lambda d: d.update(tx_power_watts=3))
        with pytest.raises(ConfigError, match="tx_power_watts"):
            load_config(path)

    def test_unknown_nested_key_rejected(self, tmp_path):
        def mutate(d):
            d["links"]["sensor_controller"]["frequency_ghz"] = 1.0
        path = write_variant(tmp_path, mutate)
        with pytest.raises(ConfigError, match="frequency_ghz"):
            load_config(path)

    def test_missing_link_rejected(self, tmp_path):
        def mutate(d):
            del d["links"]["human_actuator"]
        path = write_variant(tmp_path, mutate)
        with pytest.raises(ConfigError, match="human_actuator"):
            load_config(path)

    def test_hash_stable(self, case_cfg):
        again = load_config(CASE_STUDY)
        assert again.config_hash == case_cfg.config_hash

    def test_parse_rejects_non_mapping(self):
        with pytest.raises(ConfigError):
            parse_config([1, 2, 3])


class TestCheckCommand:
    def test_collab_regime_stable_exit(self, capsys, tmp_path, case_cfg):
        rc = cli.main(["check", "--config", CASE_STUDY, "--out",
                       str(tmp_path)])
        out = capsys.readouterr().out
        assert rc == cli.EXIT_OK
        lhs = float(out.split("lhs=")[1].split()[0])
        verdict = pipeline.verdict_for_regime(case_cfg, "collab")
        assert lhs == pytest.approx(verdict.lhs, rel=1e-6)
        report = json.loads((tmp_path / "check_report.json").read_text())
        assert report["stable"] is True
        assert report["config_hash"] == case_cfg.config_hash

    def test_human_regime_unstable_exit(self):
        rc = cli.main(["check", "--config", CASE_STUDY, "--regime",
                       "human"])
        assert rc == cli.EXIT_UNSTABLE

    def test_machine_and_error_free_regimes(self):
        assert cli.main(["check", "--config", CASE_STUDY, "--regime",
                         "machine"]) == cli.EXIT_OK
        assert cli.main(["check", "--config", CASE_STUDY, "--regime",
                         "error-free"]) == cli.EXIT_OK

    def test_invalid_config_exit_one(self, tmp_path):
        path = write_variant(tmp_path,
                             lambda d: d["links"].pop("sensor_human"))
        assert cli.main(["check", "--config", path]) == cli.EXIT_ERROR

    def test_missing_gains_exit_one(self, tmp_path):
        path = write_variant(tmp_path, lambda d: d.pop("gains"))
        assert cli.main(["check", "--config", path]) == cli.EXIT_ERROR


class TestRegionCommand:
    def test_linear_boundary_and_artifacts(self, tmp_path):
        rc = cli.main(["region", "--config", CASE_STUDY, "--pair",
                       "alpha_h,alpha_hm", "--grid", "0.0:0.4:7",
                       "--out", str(tmp_path)])
        assert rc == cli.EXIT_OK
        rows = (tmp_path / "boundary_alpha_h_alpha_hm.csv") \
            .read_text().strip().splitlines()[1:]
        pts = [tuple(r.split(",")) for r in rows]
        ok = [(float(x), float(y)) for x, y, s, _ in pts if s == "ok"]
        assert len(ok) == 7
        xs = np.array([p[0] for p in ok])
        ys = np.array([p[1] for p in ok])
        slope, intercept = np.polyfit(xs, ys, 1)
        residual = np.abs(ys - (slope * xs + intercept)).max()
        assert residual < 1e-6
        summary = json.loads((tmp_path / "region_summary.json").read_text())
        line = summary["closed_form_line"]
        assert slope == pytest.approx(line["slope"], abs=1e-6)
        assert intercept == pytest.approx(line["intercept"], abs=1e-6)
        raster = (tmp_path / "raster_alpha_h_alpha_hm.csv").read_text()
        assert raster.startswith("param1,param2,lhs,stable")

    def test_empty_grid_exit_one(self, tmp_path):
        rc = cli.main(["region", "--config", CASE_STUDY, "--grid",
                       "0.0:1.0:0", "--out", str(tmp_path)])
        assert rc == cli.EXIT_ERROR

    def test_bad_pair_exit_one(self, tmp_path):
        rc = cli.main(["region", "--config", CASE_STUDY, "--pair",
                       "alpha_hm,bogus", "--out", str(tmp_path)])
        assert rc == cli.EXIT_ERROR


@pytest.fixture(scope="module")
def sim_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    with open(CASE_STUDY) as fh:
        data = yaml.safe_load(fh)
    data["sim"]["horizon_steps"] = 800
    data["analysis"]["oracle_cycles"] = 50_000
    path = out / "cfg.yaml"
    path.write_text(yaml.safe_dump(data))
    rc = cli.main(["simulate", "--config", str(path), "--out",
                   str(out / "run1")])
    assert rc == cli.EXIT_OK
    return out, str(path)


class TestSimulateCommand:
    def test_artifacts_exist(self, sim_out):
        out, _ = sim_out
        run1 = out / "run1"
        for regime in ("collab", "machine", "human"):
            assert (run1 / f"trace_{regime}.ndjson").exists()
        assert (run1 / "cost_curves.csv").exists()
        summary = json.loads((run1 / "simulate_summary.json").read_text())
        assert set(summary["regimes"]) == {"collab", "machine", "human"}

    def test_cost_ordering_human_worst(self, sim_out):
        out, _ = sim_out
        summary = json.loads(
            (out / "run1" / "simulate_summary.json").read_text())
        costs = {r: summary["regimes"][r]["final_cumulative_cost"]
                 for r in summary["regimes"]}
        assert costs["human"] > 5 * costs["collab"]
        assert costs["human"] > 5 * costs["machine"]

    def test_seed_replay_identical_hashes(self, sim_out):
        out, path = sim_out
        rc = cli.main(["simulate", "--config", path, "--out",
                       str(out / "run2")])
        assert rc == cli.EXIT_OK
        s1 = json.loads((out / "run1" / "simulate_summary.json").read_text())
        s2 = json.loads((out / "run2" / "simulate_summary.json").read_text())
        for regime in s1["regimes"]:
            assert s1["regimes"][regime]["trace_sha256"] == \
                s2["regimes"][regime]["trace_sha256"]

    def test_oracle_tv_reported(self, sim_out):
        out, _ = sim_out
        summary = json.loads(
            (out / "run1" / "simulate_summary.json").read_text())
        assert summary["oracle"]["tv_distance"] < 0.02
        assert summary["oracle"]["n_cycles"] == 50_000


class TestEstimateCommand:
    def test_round_trip_chain_from_simulated_session(self, tmp_path,
                                                     chain_variable):
        """Logs generated under a known chain re-estimate it within 0.05
        entrywise at ten thousand observed loops."""
        with open(CASE_STUDY) as fh:
            data = yaml.safe_load(fh)
        data["lag_chain"] = {
            "states_steps": [3, 7],
            "transition_matrix": [[0.1, 0.9], [0.9, 0.1]],
        }
        data["plant"] = {"kind": "static"}
        # ten thousand loops at roughly 8 slots per loop
        data["sim"] = {"horizon_steps": 90_000, "master_seed": 5}
        cfg_path = tmp_path / "cfg.yaml"
        cfg_path.write_text(yaml.safe_dump(data))
        rc = cli.main(["simulate", "--config", str(cfg_path), "--out",
                       str(tmp_path / "sim")])
        assert rc == cli.EXIT_OK
        rc = cli.main(["estimate", "--config", str(cfg_path), "--out",
                       str(tmp_path / "est"),
                       str(tmp_path / "sim" / "session_collab.ndjson")])
        assert rc == cli.EXIT_OK
        report = json.loads((tmp_path / "est" / "estimates.json")
                            .read_text())
        assert report["n_lags"] >= 10_000
        got = np.array(report["chain"]["transition_matrix"])
        assert np.abs(got - np.array([[0.1, 0.9], [0.9, 0.1]])).max() < 0.05

    def test_plain_text_lag_file(self, tmp_path):
        lag_file = tmp_path / "lags.txt"
        lag_file.write_text("\n".join(["0.15", "0.34", "0.36", "0.16",
                                       "0.35"] * 20))
        rc = cli.main(["estimate", "--config", CASE_STUDY, "--out",
                       str(tmp_path), str(lag_file)])
        assert rc == cli.EXIT_OK
        report = json.loads((tmp_path / "estimates.json").read_text())
        assert report["chain"]["states_steps"] == [3, 7]
        assert report["gains"] is None

    def test_empty_log_exit_one(self, tmp_path):
        empty = tmp_path / "empty.ndjson"
        empty.write_text("")
        assert cli.main(["estimate", "--config", CASE_STUDY, "--out",
                         str(tmp_path), str(empty)]) == cli.EXIT_ERROR

    def test_malformed_line_reports_lineno(self, tmp_path, capsys):
        bad = tmp_path / "bad.ndjson"
        bad.write_text('{"type": "meta", "schema_version": 1}\nnot json\n')
        rc = cli.main(["estimate", "--config", CASE_STUDY, "--out",
                       str(tmp_path), str(bad)])
        assert rc == cli.EXIT_ERROR
        assert ":2:" in capsys.readouterr().err

    def test_estimates_feed_check(self, tmp_path):
        lag_file = tmp_path / "lags.txt"
        lag_file.write_text("\n".join(["0.15", "0.35"] * 30))
        assert cli.main(["estimate", "--config", CASE_STUDY, "--out",
                         str(tmp_path), str(lag_file)]) == cli.EXIT_OK
        rc = cli.main(["check", "--config", CASE_STUDY, "--estimates",
                       str(tmp_path / "estimates.json")])
        assert rc in (cli.EXIT_OK, cli.EXIT_UNSTABLE)
