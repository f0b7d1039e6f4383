import json

import numpy as np
import pytest

from crowdroad.errors import InvalidParameterError
from crowdroad.evaluation import run_baselines
from crowdroad.simulation import (SeedBundle, averaged_trace_metrics,
                                  nominal_profile, run_collaborative,
                                  run_vehicle, save_result, table1_fleet,
                                  table1_scenario, table2_fleet)


def small_scenario(**overrides):
    base = dict(n_vehicles=3, n_steps=40, seeds=SeedBundle(),
                gp_restarts_first=1, gp_restarts_refit=0)
    base.update(overrides)
    return table1_scenario(**base)


class TestFleets:
    def test_table1_first_vehicle(self):
        fleet = table1_fleet(10)
        assert fleet[0].sprung_mass == pytest.approx(273.0)
        assert fleet[0].spring_stiffness == pytest.approx(14_560.0)

    def test_table1_last_vehicle(self):
        fleet = table1_fleet(10)
        assert fleet[9].sprung_mass == pytest.approx(300.0)
        assert fleet[9].spring_stiffness == pytest.approx(16_000.0)

    def test_shared_parameters(self):
        for p in table1_fleet(10):
            assert p.tire_stiffness == 190_000.0
            assert p.unsprung_mass == 60.0
            assert p.suspension_damping == 1000.0
            assert p.tire_damping == 0.0

    def test_table2_rig_fleet(self):
        fleet = table2_fleet(10)
        assert fleet[0].sprung_mass == pytest.approx(2.12)
        assert fleet[9].sprung_mass == pytest.approx(2.12 + 0.9)
        assert fleet[0].tire_damping == pytest.approx(7.0)

    def test_rejects_empty_fleet(self):
        with pytest.raises(InvalidParameterError):
            table1_fleet(0)


class TestScenario:
    def test_table1_defaults(self):
        sc = table1_scenario()
        assert sc.n_vehicles == 10
        assert sc.n_steps == 151
        assert sc.lag == 25
        np.testing.assert_allclose(sc.speeds[0] * sc.sample_time * 150, 40.0)

    def test_validation(self):
        with pytest.raises(InvalidParameterError):
            table1_scenario(n_steps=1)
        with pytest.raises(InvalidParameterError):
            small_scenario(speeds=(10.0,))  # wrong length for fleet
        with pytest.raises(InvalidParameterError):
            small_scenario(regression="svm")

    def test_config_hash_stable(self):
        a, b = table1_scenario(), table1_scenario()
        assert a.config_hash() == b.config_hash()
        c = table1_scenario(seeds=SeedBundle(road=9))
        assert c.config_hash() != a.config_hash()


class TestGroundTruth:
    def test_nominal_profile_grid(self):
        sc = small_scenario()
        prof = nominal_profile(sc)
        assert prof.positions.size >= sc.n_steps
        np.testing.assert_allclose(prof.spacing,
                                   sc.nominal_speed * sc.sample_time)

    def test_deterministic_per_seed(self):
        sc = small_scenario()
        a, b = nominal_profile(sc), nominal_profile(sc)
        assert np.array_equal(a.elevations, b.elevations)


class TestCollaborativeRun:
    def test_single_vehicle_equals_kf_only(self):
        sc = small_scenario(n_vehicles=1)
        solo = run_collaborative(sc, scheme="nigp-psm")
        plain = run_collaborative(sc, scheme="kf-only")
        np.testing.assert_array_equal(solo.traces[0].road_smoothed,
                                      plain.traces[0].road_smoothed)
        assert solo.metrics.rmse_smoothed[0] == plain.metrics.rmse_smoothed[0]

    def test_deterministic_serialization(self, tmp_path):
        sc = small_scenario()
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        save_result(run_collaborative(sc, scheme="nigp-psm"), out_a)
        save_result(run_collaborative(sc, scheme="nigp-psm"), out_b)
        for name in sorted(p.name for p in out_a.iterdir()):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_no_cross_vehicle_contamination(self):
        # a vehicle's standalone run only consumes its own seed streams,
        # so running it inside the fleet loop changes nothing
        sc = small_scenario()
        fleet_run = run_collaborative(sc, scheme="kf-only")
        solo = run_vehicle(sc, 1, channel=None)
        np.testing.assert_array_equal(fleet_run.traces[1].road_filtered,
                                      solo.trace.road_filtered)

    def test_snapshots_and_metrics_shapes(self):
        sc = small_scenario()
        res = run_collaborative(sc, scheme="gp-psm")
        assert len(res.gp_snapshots) == 3
        assert res.metrics.rmse_smoothed.shape == (3,)
        assert np.all(np.isfinite(res.metrics.cloud_rmse))
        assert np.isnan(res.metrics.fitted_input_noise_std).all()
        nigp = run_collaborative(sc, scheme="nigp-psm")
        assert np.all(np.isfinite(nigp.metrics.fitted_input_noise_std))

    def test_kf_chain_uses_predecessor(self):
        sc = small_scenario()
        chain = run_collaborative(sc, scheme="kf-chain")
        plain = run_collaborative(sc, scheme="kf-only")
        # vehicle 1 identical, later vehicles differ through the channel
        np.testing.assert_array_equal(chain.traces[0].road_filtered,
                                      plain.traces[0].road_filtered)
        assert not np.allclose(chain.traces[1].road_filtered,
                               plain.traces[1].road_filtered)

    def test_save_result_layout(self, tmp_path):
        sc = small_scenario()
        res = run_collaborative(sc, scheme="nigp-psm")
        save_result(res, tmp_path / "run")
        names = {p.name for p in (tmp_path / "run").iterdir()}
        assert {"ground_truth.csv", "metrics.csv", "manifest.json",
                "vehicle_1_trace.csv", "vehicle_3_trace.csv",
                "gp_after_1.json", "gp_after_3.json"} <= names
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert manifest["config_hash"] == sc.config_hash()
        assert manifest["seeds"] == {"road": 1, "measurement": 2, "gps": 3,
                                     "optimizer": 4}


class TestBaselines:
    def test_all_schemes_run_and_pair(self):
        sc = small_scenario()
        metrics = run_baselines(sc, schemes=("kf-only", "kf-chain",
                                             "averaged-kf"))
        assert set(metrics) == {"kf-only", "kf-chain", "averaged-kf"}
        # paired road realization: vehicle-1 error identical across schemes
        assert (metrics["kf-only"].rmse_smoothed[0]
                == metrics["kf-chain"].rmse_smoothed[0])

    def test_averaged_scheme_improves_on_single_average(self):
        sc = small_scenario(n_vehicles=4)
        kf = run_collaborative(sc, scheme="kf-only")
        avg = averaged_trace_metrics(kf)
        assert avg.scheme == "averaged-kf"
        assert avg.cloud_rmse.shape == (4,)
        # fusing all four is at least as good as vehicle 1 alone in rmse
        assert avg.cloud_rmse[-1] <= avg.cloud_rmse[0] + 1e-12

    def test_unknown_scheme_rejected(self):
        with pytest.raises(InvalidParameterError):
            run_baselines(small_scenario(), schemes=("kf-only", "bogus"))


class TestSeedBundle:
    def test_for_run_derives_new_streams(self):
        base = SeedBundle()
        derived = base.for_run(3)
        assert derived != base
        assert base.for_run(3) == derived
        assert base.for_run(0) == base
