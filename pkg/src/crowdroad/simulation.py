"""Scenario assembly and the end-to-end collaborative loop: build a
heterogeneous fleet, synthesize the shared road and each vehicle's sensor
environment, and run the sequence of filter -> smoother -> upload ->
refit -> download across the fleet.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import gp
from .cloud import CloudState, Contribution, download, upload
from .errors import InvalidParameterError
from .evaluation import RunMetrics, rmse, write_metrics_csv
from .kalman import (EstimateTrace, PseudoMeasurementChannel,
                     build_estimate_trace, fixed_lag_smooth, kf_run)
from .road import (RoadProfile, SensingConfig, corrupt_measurements,
                   corrupt_positions, generate_profile)
from .vehicle import (QuarterCarParams, RoadModelParams,
                      augment_and_discretize, build_continuous_model,
                      discretize_physical)

TOOL_VERSION = "crowdroad/0.1.0"

# Segment of about 40 m covered in 1.5 s.
DEFAULT_SPEED = 40.0 / 1.5


@dataclass(frozen=True)
class SeedBundle:
    """Named, independent seed streams for one run."""

    road: int = 1
    measurement: int = 2
    gps: int = 3
    optimizer: int = 4

    def for_run(self, run_index: int) -> "SeedBundle":
        """Derive an independent bundle for the run_index-th repetition."""
        if run_index == 0:
            return self
        return SeedBundle(*(derive_seed(getattr(self, name), run_index)
                            for name in ("road", "measurement", "gps", "optimizer")))


def derive_seed(base: int, *keys: int) -> int:
    return int(np.random.SeedSequence([base, *keys]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce one collaborative run."""

    fleet: tuple[QuarterCarParams, ...]
    road: RoadModelParams
    speeds: tuple[float, ...]  # m/s, one per vehicle
    nominal_speed: float  # m/s, the cloud's reference speed
    sample_time: float  # s
    n_steps: int
    sensing: SensingConfig
    lag: int
    regression: str = gp.NOISY_INPUT  # cloud mode for collaborative runs
    seeds: SeedBundle = field(default_factory=SeedBundle)
    discretization: str = "zoh"
    physical_process_noise: float = 1e-8
    r_miscalibration: float = 0.1  # scale on the R handed to the filter
    # "Model uncertainty unknown to the filter" that single-vehicle
    # estimation suffers from: random force disturbances (m/s^2 std, held
    # per sample interval) on both masses in the truth simulation, a
    # constant per-vehicle sensor offset (fraction of each channel's
    # signal std), and a constant per-vehicle along-track position offset
    # (m) on top of the white GPS noise -- receiver biases persist over a
    # segment pass. None of these is reflected in what the filter is told.
    process_disturbance: float = 1.0
    sensor_bias_fraction: float = 0.5
    position_bias_std: float = 0.1
    shared_road: bool = True  # every vehicle sees the same realization
    gp_restarts_first: int = 2
    gp_restarts_refit: int = 0
    nigp_iterations: int = 2
    segment_id: str = "segment-0"

    def __post_init__(self):
        if len(self.fleet) == 0:
            raise InvalidParameterError("fleet must be non-empty")
        if len(self.speeds) != len(self.fleet):
            raise InvalidParameterError("speeds length must match fleet size")
        if any(v <= 0 for v in self.speeds) or self.nominal_speed <= 0:
            raise InvalidParameterError("speeds must be strictly positive")
        if self.n_steps < 2:
            raise InvalidParameterError("n_steps must be at least 2")
        if not 0 <= self.lag:
            raise InvalidParameterError("lag must be non-negative")
        if self.regression not in (gp.STANDARD, gp.NOISY_INPUT):
            raise InvalidParameterError(f"unknown regression mode {self.regression!r}")
        if self.r_miscalibration <= 0:
            raise InvalidParameterError("r_miscalibration must be positive")

    @property
    def n_vehicles(self) -> int:
        return len(self.fleet)

    def to_json_dict(self) -> dict:
        return {
            "fleet": [
                {
                    "sprung_mass": p.sprung_mass,
                    "unsprung_mass": p.unsprung_mass,
                    "spring_stiffness": p.spring_stiffness,
                    "tire_stiffness": p.tire_stiffness,
                    "suspension_damping": p.suspension_damping,
                    "tire_damping": p.tire_damping,
                }
                for p in self.fleet
            ],
            "road": {"pole": self.road.pole, "gain": self.road.gain},
            "speeds": list(self.speeds),
            "nominal_speed": self.nominal_speed,
            "sample_time": self.sample_time,
            "n_steps": self.n_steps,
            "sensing": {"snr_low": self.sensing.snr_low,
                        "snr_high": self.sensing.snr_high,
                        "gps_noise_std": self.sensing.gps_noise_std},
            "lag": self.lag,
            "regression": self.regression,
            "seeds": {"road": self.seeds.road, "measurement": self.seeds.measurement,
                      "gps": self.seeds.gps, "optimizer": self.seeds.optimizer},
            "discretization": self.discretization,
            "physical_process_noise": self.physical_process_noise,
            "r_miscalibration": self.r_miscalibration,
            "process_disturbance": self.process_disturbance,
            "sensor_bias_fraction": self.sensor_bias_fraction,
            "position_bias_std": self.position_bias_std,
            "shared_road": self.shared_road,
            "gp_restarts_first": self.gp_restarts_first,
            "gp_restarts_refit": self.gp_restarts_refit,
            "nigp_iterations": self.nigp_iterations,
            "segment_id": self.segment_id,
        }

    def config_hash(self) -> str:
        payload = json.dumps(self.to_json_dict(), sort_keys=True,
                             separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()


def table1_fleet(n_vehicles: int) -> tuple[QuarterCarParams, ...]:
    """Default heterogeneous fleet: sprung mass and spring stiffness grow
    linearly with the vehicle index, the rest is shared."""
    if n_vehicles < 1:
        raise InvalidParameterError("n_vehicles must be at least 1")
    fleet = []
    for i in range(1, n_vehicles + 1):
        factor = (90 + i) / 100.0
        fleet.append(QuarterCarParams(
            sprung_mass=300.0 * factor,
            unsprung_mass=60.0,
            spring_stiffness=16_000.0 * factor,
            tire_stiffness=190_000.0,
            suspension_damping=1000.0,
        ))
    return tuple(fleet)


def table2_fleet(n_vehicles: int) -> tuple[QuarterCarParams, ...]:
    """Bench-scale suspension rig fleet: heterogeneity comes from extra
    masses bolted onto the sprung mass."""
    if n_vehicles < 1:
        raise InvalidParameterError("n_vehicles must be at least 1")
    fleet = []
    for i in range(1, n_vehicles + 1):
        fleet.append(QuarterCarParams(
            sprung_mass=2.12 + (i - 1) * 0.1,
            unsprung_mass=0.97,
            spring_stiffness=999.99,
            tire_stiffness=1163.6,
            suspension_damping=9.5,
            tire_damping=7.0,
        ))
    return tuple(fleet)


def table1_scenario(n_vehicles: int = 10, n_steps: int = 151,
                    seeds: SeedBundle | None = None,
                    regression: str = gp.NOISY_INPUT,
                    **overrides) -> Scenario:
    """The default desk-scale scenario: 10 vehicles, 151 points, 40 m."""
    base = dict(
        fleet=table1_fleet(n_vehicles),
        road=RoadModelParams(pole=-0.01, gain=0.0328),
        speeds=(DEFAULT_SPEED,) * n_vehicles,
        nominal_speed=DEFAULT_SPEED,
        sample_time=0.01,
        n_steps=n_steps,
        sensing=SensingConfig(snr_low=10.0, snr_high=20.0, gps_noise_std=0.2),
        lag=25,
        regression=regression,
        seeds=seeds or SeedBundle(),
    )
    base.update(overrides)
    return Scenario(**base)


@dataclass
class VehicleRun:
    """Everything one vehicle produced during its pass."""

    index: int  # 0-based
    trace: EstimateTrace
    truth_road: np.ndarray  # the road the vehicle actually experienced
    measurement_noise_variance: np.ndarray
    model: object = None  # the DiscreteAugmentedModel the filter used
    steps: list = None  # FilterStep sequence, for re-smoothing analyses


@dataclass
class CollaborativeResult:
    """Full record of one run: traces, cloud snapshots, metrics, truth."""

    scheme: str
    scenario: Scenario
    ground_truth: RoadProfile
    vehicle_runs: list[VehicleRun]
    gp_snapshots: list[dict]  # serialized model documents, one per refit
    metrics: RunMetrics
    final_cloud: CloudState | None

    @property
    def traces(self) -> list[EstimateTrace]:
        return [run.trace for run in self.vehicle_runs]


def nominal_profile(scenario: Scenario) -> RoadProfile:
    """Ground-truth road realization on the nominal-speed grid, long
    enough to cover the fastest vehicle."""
    stretch = max(scenario.speeds) / scenario.nominal_speed
    n_nominal = max(scenario.n_steps,
                    int(math.ceil((scenario.n_steps - 1) * stretch)) + 1)
    return generate_profile(scenario.road, scenario.nominal_speed,
                            scenario.sample_time, n_nominal,
                            seed=np.random.SeedSequence([scenario.seeds.road]))


def vehicle_positions(scenario: Scenario, index: int) -> np.ndarray:
    return np.arange(scenario.n_steps) * (scenario.speeds[index] * scenario.sample_time)


def vehicle_truth_road(scenario: Scenario, index: int) -> np.ndarray:
    """Road sequence the vehicle actually experiences: the shared
    realization sampled along its own positions, intensity-scaled to its
    speed."""
    speed = scenario.speeds[index]
    if not scenario.shared_road:
        own = generate_profile(scenario.road, speed, scenario.sample_time,
                               scenario.n_steps,
                               seed=np.random.SeedSequence(
                                   [scenario.seeds.road, index]))
        return own.elevations
    profile = nominal_profile(scenario)
    scale = math.sqrt(speed / scenario.nominal_speed)
    if speed == scenario.nominal_speed:
        return profile.elevations[:scenario.n_steps] * scale
    positions = vehicle_positions(scenario, index)
    return np.interp(positions, profile.positions, profile.elevations) * scale


def vehicle_road_params(scenario: Scenario, index: int) -> RoadModelParams:
    """Road model in the vehicle's own speed units (intensity scales with
    the square root of speed)."""
    speed = scenario.speeds[index]
    if speed == scenario.nominal_speed:
        return scenario.road
    gain = scenario.road.gain * math.sqrt(speed / scenario.nominal_speed)
    return RoadModelParams(pole=scenario.road.pole, gain=gain)


def run_vehicle(scenario: Scenario, index: int,
                channel: PseudoMeasurementChannel | None) -> VehicleRun:
    """Simulate one vehicle's pass and run its filter and smoother.

    The truth holds the road constant over each sample interval and adds
    random force disturbances on both masses; neither the disturbance nor
    the per-vehicle sensor bias is reflected in what the filter is told.
    """
    cont = build_continuous_model(scenario.fleet[index])
    road_params = vehicle_road_params(scenario, index)
    w_true = vehicle_truth_road(scenario, index)
    T = scenario.n_steps
    dt = scenario.sample_time

    A_d, B_d = discretize_physical(cont, dt)
    disturbance_map = np.array([[0.5 * dt * dt, 0.0], [dt, 0.0],
                                [0.0, 0.5 * dt * dt], [0.0, dt]])
    noise_rng = np.random.default_rng(
        np.random.SeedSequence([scenario.seeds.measurement, index, 1]))
    x = np.zeros(4)
    clean = np.empty((T, cont.C.shape[0]))
    for k in range(T):
        clean[k] = cont.C @ x
        accel = noise_rng.standard_normal(2) * scenario.process_disturbance
        x = A_d @ x + B_d * w_true[k] + disturbance_map @ accel

    corrupted = corrupt_measurements(
        clean, scenario.sensing,
        seed=np.random.SeedSequence([scenario.seeds.measurement, index]),
        bias_fraction=scenario.sensor_bias_fraction)
    positions_true = vehicle_positions(scenario, index)
    positions_gps = corrupt_positions(
        positions_true, scenario.sensing.gps_noise_std,
        seed=np.random.SeedSequence([scenario.seeds.gps, index]))
    if scenario.position_bias_std > 0:
        bias_rng = np.random.default_rng(
            np.random.SeedSequence([scenario.seeds.gps, index, 1]))
        positions_gps = positions_gps + (bias_rng.standard_normal()
                                         * scenario.position_bias_std)

    R = np.diag(corrupted.noise_variance * scenario.r_miscalibration)
    model = augment_and_discretize(
        cont, road_params, scenario.sample_time,
        method=scenario.discretization,
        physical_process_noise=scenario.physical_process_noise,
        measurement_noise=R)

    x0 = np.zeros(model.n_states)
    P0 = np.diag([1.0] * 4 + [model.stationary_road_variance()])
    steps = kf_run(model, corrupted.noisy, positions=positions_gps,
                   init=(x0, P0), channel=channel)
    xs, Ps = fixed_lag_smooth(model, steps, scenario.lag)
    trace = build_estimate_trace(positions_gps, steps, xs, Ps)
    return VehicleRun(index=index, trace=trace, truth_road=w_true,
                      measurement_noise_variance=corrupted.noise_variance,
                      model=model, steps=steps)


def _chain_channel(previous: EstimateTrace) -> PseudoMeasurementChannel:
    """Pseudo-measurement from the predecessor's filtered road estimate,
    keyed by time step."""
    values = previous.road_filtered
    variances = previous.road_filtered_var

    def value(s: float, k: int) -> float:
        return float(values[k])

    def variance(s: float, k: int) -> float:
        return float(variances[k])

    return PseudoMeasurementChannel(value=value, variance=variance)


def _cloud_eval_grid(scenario: Scenario, profile: RoadProfile
                     ) -> tuple[np.ndarray, np.ndarray]:
    s = profile.positions[:scenario.n_steps]
    w = profile.elevations[:scenario.n_steps]
    return s, w


def run_collaborative(scenario: Scenario, scheme: str | None = None
                      ) -> CollaborativeResult:
    """Run the full loop for one scenario.

    scheme selects the estimation variant: "nigp-psm" / "gp-psm" run the
    cloud loop with the respective regression mode, "kf-chain" feeds each
    vehicle its predecessor's filtered estimate, "kf-only" runs every
    vehicle standalone. Default derives from scenario.regression.
    Deterministic per seed bundle.
    """
    if scheme is None:
        scheme = "nigp-psm" if scenario.regression == gp.NOISY_INPUT else "gp-psm"
    if scheme not in ("kf-only", "kf-chain", "nigp-psm", "gp-psm"):
        raise InvalidParameterError(f"unknown scheme {scheme!r}")

    profile = nominal_profile(scenario)
    eval_s, eval_w = _cloud_eval_grid(scenario, profile)
    N = scenario.n_vehicles

    cloud: CloudState | None = None
    if scheme in ("nigp-psm", "gp-psm"):
        cloud = CloudState.empty(
            mode=gp.NOISY_INPUT if scheme == "nigp-psm" else gp.STANDARD,
            nominal_speed=scenario.nominal_speed,
            segment_id=scenario.segment_id,
            fit_seed=scenario.seeds.optimizer,
            restarts_first=scenario.gp_restarts_first,
            restarts_refit=scenario.gp_restarts_refit,
            nigp_iterations=scenario.nigp_iterations)

    runs: list[VehicleRun] = []
    snapshots: list[dict] = []
    rmse_filt = np.empty(N)
    rmse_smooth = np.empty(N)
    cloud_rmse = np.full(N, np.nan)
    mean_post_std = np.full(N, np.nan)
    fitted_sigma_s = np.full(N, np.nan)

    for i in range(N):
        try:
            channel = None
            if cloud is not None:
                channel = download(cloud, scenario.speeds[i],
                                   query_noise_std=scenario.sensing.gps_noise_std)
            elif scheme == "kf-chain" and i > 0:
                channel = _chain_channel(runs[-1].trace)

            run = run_vehicle(scenario, i, channel)
            runs.append(run)
            rmse_filt[i] = rmse(run.trace.road_filtered, run.truth_road)
            rmse_smooth[i] = rmse(run.trace.road_smoothed, run.truth_road)

            if cloud is not None:
                cloud = upload(cloud, Contribution(
                    vehicle_id=i + 1,
                    positions=run.trace.positions,
                    road_estimates=run.trace.road_smoothed,
                    speed=scenario.speeds[i],
                    timestamp=i))
                snapshots.append(cloud.model.to_json_dict())
                mean, var = cloud.model.predict(eval_s)
                cloud_rmse[i] = rmse(mean, eval_w)
                mean_post_std[i] = float(np.mean(np.sqrt(var)))
                if cloud.model.hyperparams.input_noise_std is not None:
                    fitted_sigma_s[i] = cloud.model.hyperparams.input_noise_std
        except Exception as exc:
            exc.args = (f"vehicle {i + 1}: {exc.args[0] if exc.args else exc!r}",
                        *exc.args[1:])
            raise

    metrics = RunMetrics(scheme=scheme, rmse_filtered=rmse_filt,
                         rmse_smoothed=rmse_smooth, cloud_rmse=cloud_rmse,
                         mean_posterior_std=mean_post_std,
                         fitted_input_noise_std=fitted_sigma_s)
    truth = RoadProfile(positions=profile.positions[:scenario.n_steps],
                        elevations=profile.elevations[:scenario.n_steps],
                        road=scenario.road, speed=scenario.nominal_speed,
                        seed=scenario.seeds.road)
    return CollaborativeResult(scheme=scheme, scenario=scenario,
                               ground_truth=truth, vehicle_runs=runs,
                               gp_snapshots=snapshots, metrics=metrics,
                               final_cloud=cloud)


def averaged_trace_metrics(kf_only_result: CollaborativeResult) -> RunMetrics:
    """Fuse standalone smoothed traces by a running pointwise mean.

    The i-th entry is the error of the average over the first i vehicles,
    each trace scaled to nominal-speed units first.
    """
    scenario = kf_only_result.scenario
    profile = kf_only_result.ground_truth
    N = scenario.n_vehicles
    scaled = np.stack([
        run.trace.road_smoothed * math.sqrt(scenario.nominal_speed / scenario.speeds[run.index])
        for run in kf_only_result.vehicle_runs
    ])
    cloud_rmse = np.empty(N)
    for i in range(N):
        fused = scaled[:i + 1].mean(axis=0)
        cloud_rmse[i] = rmse(fused, profile.elevations)
    base = kf_only_result.metrics
    return RunMetrics(scheme="averaged-kf",
                      rmse_filtered=base.rmse_filtered.copy(),
                      rmse_smoothed=base.rmse_smoothed.copy(),
                      cloud_rmse=cloud_rmse,
                      mean_posterior_std=np.full(N, np.nan))


def save_result(result: CollaborativeResult, out_dir) -> None:
    """Persist one run as a directory of delimited files plus manifest."""
    os.makedirs(out_dir, exist_ok=True)
    result.ground_truth.to_csv(os.path.join(out_dir, "ground_truth.csv"))
    for run in result.vehicle_runs:
        run.trace.to_csv(os.path.join(out_dir, f"vehicle_{run.index + 1}_trace.csv"))
    for i, doc in enumerate(result.gp_snapshots, start=1):
        with open(os.path.join(out_dir, f"gp_after_{i}.json"), "w") as fh:
            json.dump(doc, fh, indent=1)
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), [result.metrics])
    manifest = {
        "tool_version": TOOL_VERSION,
        "scheme": result.scheme,
        "config_hash": result.scenario.config_hash(),
        "seeds": result.scenario.to_json_dict()["seeds"],
        "n_vehicles": result.scenario.n_vehicles,
        "n_steps": result.scenario.n_steps,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
