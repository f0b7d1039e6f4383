import json
import os

import numpy as np
import pytest

from crowdroad.cli import load_config, main
from crowdroad.errors import ConfigError

SMALL_CONFIG = {
    "name": "tiny",
    "fleet": "table1",
    "n_vehicles": 2,
    "n_steps": 30,
    "seeds": 1,
    "schemes": ["kf-only", "nigp-psm"],
    "workers": 1,
    "gp_restarts_first": 1,
    "gp_restarts_refit": 0,
}


def write_config(tmp_path, overrides=None, name="config.json"):
    cfg = dict(SMALL_CONFIG)
    cfg.update(overrides or {})
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


class TestConfigValidation:
    def test_loads_defaults(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        assert cfg.n_steps == 30
        assert len(cfg.fleet) == 2
        assert cfg.sensing.gps_noise_std == 0.2
        assert cfg.lag == 25

    def test_unknown_key_named(self, tmp_path):
        path = write_config(tmp_path, {"wheelbase": 2.7})
        with pytest.raises(ConfigError, match="wheelbase"):
            load_config(path)

    def test_negative_mass_named(self, tmp_path):
        path = write_config(tmp_path, {
            "fleet": [{"sprung_mass": -1.0, "unsprung_mass": 60.0,
                       "spring_stiffness": 1e4, "tire_stiffness": 1e5,
                       "suspension_damping": 1e3}]})
        with pytest.raises(ConfigError, match="sprung_mass"):
            load_config(path)

    def test_invalid_json_reports_position(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"name": "x",}')
        with pytest.raises(ConfigError, match="line"):
            load_config(path)

    def test_bad_scheme_rejected(self, tmp_path):
        path = write_config(tmp_path, {"schemes": ["kf-only", "magic"]})
        with pytest.raises(ConfigError, match="magic"):
            load_config(path)

    def test_exit_code_2_on_config_error(self, tmp_path, capsys):
        path = write_config(tmp_path, {"n_steps": 1})
        code = main(["simulate", "--config", str(path),
                     "--out", str(tmp_path / "out")])
        assert code == 2
        assert "n_steps" in capsys.readouterr().err

    def test_bundled_configs_load(self):
        import crowdroad
        base = os.path.join(os.path.dirname(crowdroad.__file__), "configs")
        for name in ("table1.json", "table2.json"):
            cfg = load_config(os.path.join(base, name))
            assert cfg.n_steps == 151
            assert cfg.lag == 25


class TestSimulateCommand:
    def test_tiny_run_layout(self, tmp_path):
        path = write_config(tmp_path)
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(path), "--out", str(out)]) == 0
        assert (out / "metrics.csv").exists()
        assert (out / "summary.json").exists()
        header = (out / "metrics.csv").read_text().splitlines()[0]
        assert header == ("scheme,vehicle_index,rmse_filtered_m,"
                          "rmse_smoothed_m,cloud_rmse_m,mean_posterior_std_m")
        run_dir = out / "nigp-psm" / "seed_000"
        assert (run_dir / "vehicle_1_trace.csv").exists()
        assert (run_dir / "gp_after_2.json").exists()
        assert (run_dir / "ground_truth.csv").exists()
        assert (run_dir / "cloudstate.json").exists()
        assert (out / "figures" / "rmse_by_vehicle.png").exists()
        assert (out / "figures" / "nigp-psm_fit_after_1.png").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["seed_manifest"]["run_indices"] == [0]

    def test_scheme_and_seed_overrides(self, tmp_path):
        path = write_config(tmp_path)
        out = tmp_path / "out"
        code = main(["simulate", "--config", str(path), "--out", str(out),
                     "--seeds", "1", "--schemes", "kf-only"])
        assert code == 0
        run_dirs = [p for p in (out / "kf-only").iterdir() if p.is_dir()]
        assert len(run_dirs) == 1
        assert not (out / "nigp-psm").exists()

    def test_deterministic_outputs(self, tmp_path):
        path = write_config(tmp_path, {"emit": {"figures": False}})
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--config", str(path), "--out", str(out_a)])
        main(["simulate", "--config", str(path), "--out", str(out_b)])
        for sub in ("metrics.csv", "summary.json"):
            assert (out_a / sub).read_bytes() == (out_b / sub).read_bytes()


class TestProp1Command:
    def test_default_run_has_no_violations(self, tmp_path, capsys):
        out = tmp_path / "report.txt"
        code = main(["prop1", "--systems", "20", "--horizon", "8",
                     "--seed", "0", "--out", str(out)])
        assert code == 0
        report = out.read_text()
        assert "violations: 0" in report
        assert capsys.readouterr().out == report

    def test_zero_systems_is_usage_error(self, tmp_path):
        assert main(["prop1", "--systems", "0"]) == 2

    def test_report_bytes_deterministic(self, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        main(["prop1", "--systems", "5", "--horizon", "6", "--seed", "3",
              "--out", str(a)])
        main(["prop1", "--systems", "5", "--horizon", "6", "--seed", "3",
              "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()


class TestGpfitCommand:
    def _dataset(self, tmp_path, n=60):
        rng = np.random.default_rng(0)
        s = np.linspace(0, 40, n)
        w = 0.02 * np.sin(s / 3) + rng.normal(0, 0.002, n)
        path = tmp_path / "data.csv"
        np.savetxt(path, np.column_stack([s, w]), delimiter=",",
                   header="s_m,w_m", comments="")
        return path

    def test_fit_outputs(self, tmp_path):
        data = self._dataset(tmp_path)
        out = tmp_path / "fit"
        code = main(["gpfit", str(data), "--mode", "nigp", "--out", str(out),
                     "--restarts", "1", "--seed", "0"])
        assert code == 0
        doc = json.loads((out / "model.json").read_text())
        assert doc["version"] == "gpmodel/1"
        assert doc["hyperparams"]["input_noise_std"] is not None
        pred = np.loadtxt(out / "predictions.csv", delimiter=",", skiprows=1)
        assert pred.shape == (4 * 60, 3)
        assert (out / "fit.png").exists()

    def test_idempotent_model_json(self, tmp_path):
        data = self._dataset(tmp_path)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            main(["gpfit", str(data), "--mode", "gp", "--out", str(out),
                  "--restarts", "2", "--seed", "7"])
        assert ((out_a / "model.json").read_bytes()
                == (out_b / "model.json").read_bytes())

    def test_too_few_rows_exit_2(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text("s_m,w_m\n1.0,0.5\n")
        assert main(["gpfit", str(path), "--out", str(tmp_path / "o")]) == 2


class TestResumeCommand:
    def test_continues_from_saved_state(self, tmp_path):
        cfg_path = write_config(tmp_path, {"n_vehicles": 3})
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(cfg_path), "--out", str(out),
                     "--schemes", "nigp-psm"]) == 0
        state = out / "nigp-psm" / "seed_000" / "cloudstate.json"
        resumed = tmp_path / "resumed"
        # the saved state holds 3 contributions; allow 3 more vehicles
        cfg6 = write_config(tmp_path, {"n_vehicles": 6}, name="six.json")
        code = main(["resume", "--state", str(state), "--config", str(cfg6),
                     "--out", str(resumed)])
        assert code == 0
        final = json.loads((resumed / "cloudstate.json").read_text())
        assert len(final["contributions"]) == 6
        assert (resumed / "vehicle_6_trace.csv").exists()
        assert (resumed / "resume_metrics.csv").exists()

    def test_nothing_to_resume(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        out = tmp_path / "out"
        main(["simulate", "--config", str(cfg_path), "--out", str(out),
              "--schemes", "nigp-psm"])
        state = out / "nigp-psm" / "seed_000" / "cloudstate.json"
        code = main(["resume", "--state", str(state), "--config", str(cfg_path),
                     "--out", str(tmp_path / "r")])
        assert code == 0
        assert "nothing to resume" in capsys.readouterr().out
