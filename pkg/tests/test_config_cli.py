import copy
import csv
import json

import numpy as np
import pytest

from oamradcom import cli
from oamradcom.config import (ConfigError, from_dict, load_config, paper_sec5, preset, read_json,
                              to_dict)


def tiny(out):
    """One cone target on a 6-mode, 6-subcarrier array: fast enough for every command."""
    return {
        "system": {"n_tx": 17, "n_rx": 17, "radius": 30 * 2 * np.pi / 209.0,
                   "modes": list(range(-3, 3)), "wavenumbers": [209.0 + i for i in range(6)],
                   "gain": 1e8, "comm_gain": 3.62e3},
        "targets": [{"range": 82.5, "elevation_deg": 20.0, "azimuth_deg": 70.0,
                     "spin_rate": 8 * np.pi, "half_cone_deg": 60.0,
                     "scatterers": [{"role": "centroid"},
                                    {"role": "vertex", "rotation_radius": 1.0,
                                     "initial_phase": 0.3}]}],
        "snr_db": [20.0],
        "snapshots": 30,
        "slow_time": {"sample_rate": 2000.0, "duration": 0.3},
        "trials": 2,
        "comm": {"rate_min": 1.0, "grid_n": 4, "fisher_rate": 40.0},
        "out": str(out),
    }


def write_config(tmp_path, raw, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestConfig:
    def test_preset_values(self, scenario):
        s = scenario.system
        assert (s.n_tx, s.n_rx) == (17, 17)
        np.testing.assert_array_equal(s.modes, np.arange(-8, 8))
        np.testing.assert_array_equal(s.wavenumbers, np.arange(209.0, 225.0))
        assert s.radius == pytest.approx(30 * 2 * np.pi / 209.0)
        got = [(t.range, np.rad2deg(t.elevation), np.rad2deg(t.azimuth), t.spin_rate / np.pi)
               for t in scenario.targets]
        assert got == pytest.approx([(82.5, 20, 70, 8), (170, 80, 20, 10), (165, 75, 25, 11.5)])
        assert all(len(t.scatterers) == 3 for t in scenario.targets)
        np.testing.assert_allclose(np.sum(s.weights ** 2), 1.0)

    def test_defaults_applied(self, scenario):
        assert scenario.snapshots == 200
        assert (scenario.sample_rate, scenario.duration) == (4000.0, 2.0)
        assert scenario.seed == 0 and scenario.trials == 1

    def test_round_trip(self, scenario):
        raw = to_dict(scenario)
        again = from_dict(json.loads(json.dumps(raw)))
        assert to_dict(again) == raw

    def test_round_trip_with_weights(self, tmp_path):
        raw = tiny(tmp_path)
        w = np.arange(1.0, 7.0)
        raw["system"]["weights"] = list(w / np.linalg.norm(w))
        sc = from_dict(raw)
        assert to_dict(from_dict(to_dict(sc))) == to_dict(sc)

    @pytest.mark.parametrize("edit,match", [
        (lambda r: r["system"].update(weights=[0.5] * 16), "sum"),
        (lambda r: r.update(targets=[]), "target"),
        (lambda r: r["targets"][0].update(range=-5.0), "targets/0/range"),
        (lambda r: r["targets"][0].update(spin_rate=1e4), "omega_max"),
        (lambda r: r.update(bounds={"r_max": 100.0}), "r_max"),
        (lambda r: r["targets"][0]["scatterers"].pop(1), "vertex"),
        (lambda r: r.update(extra=1), "extra"),
        (lambda r: r.update(comm={"target": 7}), "comm/target"),
        (lambda r: r.update(bounds={"theta_min_deg": 50.0, "theta_max_deg": 40.0}), "theta"),
    ])
    def test_validation_errors(self, edit, match):
        raw = copy.deepcopy(paper_sec5())
        edit(raw)
        with pytest.raises(ConfigError, match=match):
            from_dict(raw)

    def test_parse_error_has_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "system": {\n    "n_tx": 17,,\n')
        with pytest.raises(ConfigError, match="line 3"):
            read_json(path)

    def test_load_config(self, tmp_path):
        path = write_config(tmp_path, tiny(tmp_path))
        assert load_config(path).system.n_modes == 6
        assert len(load_config("paper-sec5").targets) == 3
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")
        with pytest.raises(ConfigError):
            preset("nope")

    def test_fisher_times(self, tmp_path):
        times = from_dict(tiny(tmp_path)).fisher_times()
        assert np.count_nonzero(times == 0) == 31
        assert times.size == 30 + 12


class TestCommands:
    def test_pcrb_scales_with_noise(self, tmp_path):
        raw = tiny(tmp_path)
        raw["snr_db"] = [20.0, 20.0 + 10 * np.log10(2)]
        assert cli.main(["pcrb", "--config", write_config(tmp_path, raw)]) == 0
        data = json.loads((tmp_path / "pcrb.json").read_text())
        a, b = (data[k]["pcrb"] for k in sorted(data, key=float))
        for key in a:
            assert b[key] == pytest.approx(a[key] / 2, rel=1e-9)

    def test_sweep_is_reproducible(self, tmp_path):
        outputs = []
        for run in ("a", "b"):
            raw = tiny(tmp_path / run)
            args = ["sweep", "--config", write_config(tmp_path, raw, f"{run}.json"),
                    "--no-spin", "--seed", "7", "--snr-db", "10,20", "--trials", "1"]
            assert cli.main(args) == 0
            outputs.append([(tmp_path / run / f).read_bytes()
                            for f in ("estimates.csv", "mse_pcrb.csv")])
        assert outputs[0] == outputs[1]
        rows = read_rows(tmp_path / "a" / "estimates.csv")
        assert rows[0] == cli.ESTIMATE_HEADER
        assert len(rows) == 1 + 2 * 2

    def test_seed_changes_output(self, tmp_path):
        blobs = []
        for seed in ("1", "2"):
            out = tmp_path / seed
            args = ["sweep", "--config", write_config(tmp_path, tiny(out), f"{seed}.json"),
                    "--no-spin", "--seed", seed, "--trials", "1"]
            assert cli.main(args) == 0
            blobs.append((out / "estimates.csv").read_bytes())
        assert blobs[0] != blobs[1]

    def test_report_echo_round_trips(self, tmp_path):
        path = write_config(tmp_path, tiny(tmp_path))
        assert cli.main(["rate", "--config", path]) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert to_dict(from_dict(report["config"])) == report["config"]
        assert report["version"] and report["command"] == "rate"
        rate = json.loads((tmp_path / "rate.json").read_text())
        assert rate["20.0"]["rate"] > 0

    def test_image_writes_spectra(self, tmp_path):
        assert cli.main(["image", "--config", write_config(tmp_path, tiny(tmp_path))]) == 0
        for name in ("estimates.csv", "spectrum_w.csv", "spectrum_u.csv", "report.json"):
            assert (tmp_path / name).exists()
        rows = read_rows(tmp_path / "spectrum_w.csv")
        assert rows[0] == ["w", "theta_deg", "phi_deg", "value"]
        assert len(rows) == 1 + 86 * 360

    def test_spin_and_synth(self, tmp_path):
        path = write_config(tmp_path, tiny(tmp_path))
        assert cli.main(["spin", "--config", path]) == 0
        assert list(tmp_path.glob("spectrogram_*_0.csv"))
        assert cli.main(["synth", "--config", path]) == 0
        with np.load(tmp_path / "echo_slow_time.npz") as f:
            assert f["data"].shape == (6, 6, 600, 1)

    def test_optimize_outputs(self, tmp_path):
        path = write_config(tmp_path, tiny(tmp_path))
        assert cli.main(["optimize", "--config", path]) == 0
        rows = read_rows(tmp_path / "optimize.csv")
        assert rows[0] == ["candidate", "weights", "objective", "rate", "feasible"]
        result = json.loads((tmp_path / "report.json").read_text())["extra"]["optimization"]
        assert result["method"] == "exhaustive"
        assert result["rate"] >= 1.0
        assert result["objective"] <= result["equal_weights"]["objective"]


class TestExitCodes:
    def test_missing_file(self, tmp_path, capsys):
        assert cli.main(["rate", "--config", str(tmp_path / "none.json")]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ConfigError" and err["exit_code"] == 2

    def test_invalid_config(self, tmp_path, capsys):
        raw = tiny(tmp_path)
        raw["system"]["weights"] = [1.0] * 6
        assert cli.main(["rate", "--config", write_config(tmp_path, raw)]) == 2
        assert "sum" in json.loads(capsys.readouterr().err)["message"]

    def test_infeasible(self, tmp_path, capsys):
        path = write_config(tmp_path, tiny(tmp_path))
        assert cli.main(["optimize", "--config", path, "--rate-min", "1000"]) == 10
        err = json.loads(capsys.readouterr().err)
        assert err["gap"] > 0 and len(err["best_weights"]) == 6

    def test_distinct_codes(self):
        codes = [code for _, code in cli.EXIT_CODES]
        assert len(set(codes)) == len(codes) and 0 not in codes and 1 not in codes

    def test_module_error_code(self, tmp_path, capsys):
        # a cube too short to track maps to the Doppler error code
        raw = tiny(tmp_path)
        raw["slow_time"] = {"sample_rate": 2000.0, "duration": 0.05}
        assert cli.main(["spin", "--config", write_config(tmp_path, raw)]) == 7
