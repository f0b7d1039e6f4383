"""Command-line interface: run experiments from a JSON config, check the
pseudo-measurement MMSE benefit on random systems, or fit a regression to
a bare dataset. Every report path writes figures next to the delimited
output.

Exit codes: 0 success, 2 configuration error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import evaluation, figures, gp, simulation
from .cloud import CloudState, Contribution, download, upload
from .errors import ConfigError, NumericalError
from .evaluation import (METRICS_CSV_HEADER, RunMetrics, mmse_oracle,
                         run_baselines, write_metrics_csv)
from .gp import GPModel
from .road import RoadProfile, SensingConfig
from .simulation import (Scenario, SeedBundle, TOOL_VERSION,
                         run_collaborative, save_result, table1_fleet,
                         table2_fleet)
from .vehicle import QuarterCarParams, RoadModelParams

_CONFIG_KEYS = {
    "name": str,
    "fleet": (str, list),
    "n_vehicles": int,
    "road": dict,
    "speed_m_s": (int, float, list),
    "nominal_speed_m_s": (int, float),
    "sample_time_s": (int, float),
    "n_steps": int,
    "snr_band": list,
    "gps_noise_std_m": (int, float),
    "smoothing_lag": int,
    "regression": str,
    "schemes": list,
    "seeds": int,
    "seed_offset": int,
    "base_seeds": dict,
    "workers": int,
    "discretization": str,
    "physical_process_noise": (int, float),
    "r_miscalibration": (int, float),
    "process_disturbance_m_s2": (int, float),
    "sensor_bias_fraction": (int, float),
    "position_bias_std_m": (int, float),
    "shared_road": bool,
    "gp_restarts_first": int,
    "gp_restarts_refit": int,
    "nigp_iterations": int,
    "segment_id": str,
    "emit": dict,
}

_EMIT_KEYS = {"traces", "gp_snapshots", "metrics", "figures", "cloudstate"}

_FLEET_PARAM_KEYS = {"sprung_mass", "unsprung_mass", "spring_stiffness",
                     "tire_stiffness", "suspension_damping", "tire_damping"}


@dataclass
class ExperimentConfig:
    """Validated experiment description (one JSON document)."""

    name: str
    fleet: tuple[QuarterCarParams, ...]
    road: RoadModelParams
    speeds: tuple[float, ...]
    nominal_speed: float
    sample_time: float
    n_steps: int
    sensing: SensingConfig
    lag: int
    regression: str
    schemes: tuple[str, ...]
    n_seeds: int
    seed_offset: int
    base_seeds: SeedBundle
    workers: int
    discretization: str
    physical_process_noise: float
    r_miscalibration: float
    process_disturbance: float
    sensor_bias_fraction: float
    position_bias_std: float
    shared_road: bool
    gp_restarts_first: int
    gp_restarts_refit: int
    nigp_iterations: int
    segment_id: str
    emit: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        import hashlib
        payload = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    def scenario(self, run_index: int) -> Scenario:
        return Scenario(
            fleet=self.fleet,
            road=self.road,
            speeds=self.speeds,
            nominal_speed=self.nominal_speed,
            sample_time=self.sample_time,
            n_steps=self.n_steps,
            sensing=self.sensing,
            lag=self.lag,
            regression=self.regression,
            seeds=self.base_seeds.for_run(run_index),
            discretization=self.discretization,
            physical_process_noise=self.physical_process_noise,
            r_miscalibration=self.r_miscalibration,
            process_disturbance=self.process_disturbance,
            sensor_bias_fraction=self.sensor_bias_fraction,
            position_bias_std=self.position_bias_std,
            shared_road=self.shared_road,
            gp_restarts_first=self.gp_restarts_first,
            gp_restarts_refit=self.gp_restarts_refit,
            nigp_iterations=self.nigp_iterations,
            segment_id=self.segment_id,
        )


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _build_fleet(raw, n_vehicles: int) -> tuple[QuarterCarParams, ...]:
    if isinstance(raw, str):
        if raw == "table1":
            return table1_fleet(n_vehicles)
        if raw == "table2":
            return table2_fleet(n_vehicles)
        raise ConfigError(f"fleet: unknown named fleet {raw!r}")
    fleet = []
    for idx, entry in enumerate(raw):
        _require(isinstance(entry, dict), f"fleet[{idx}]: expected an object")
        unknown = set(entry) - _FLEET_PARAM_KEYS
        if unknown:
            raise ConfigError(f"fleet[{idx}]: unknown key {sorted(unknown)[0]!r}")
        try:
            fleet.append(QuarterCarParams(**entry))
        except Exception as exc:
            raise ConfigError(f"fleet[{idx}]: {exc}") from exc
    _require(len(fleet) >= 1, "fleet: must contain at least one vehicle")
    return tuple(fleet)


def _build_road(raw: dict) -> RoadModelParams:
    keys = set(raw)
    try:
        if keys == {"pole", "gain"}:
            return RoadModelParams(pole=float(raw["pole"]), gain=float(raw["gain"]))
        if keys == {"roughness", "speed", "cutoff"}:
            return RoadModelParams.from_roughness(
                float(raw["roughness"]), float(raw["speed"]), float(raw["cutoff"]))
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"road: {exc}") from exc
    raise ConfigError(
        "road: expected keys {pole, gain} or {roughness, speed, cutoff}, "
        f"got {sorted(keys)}")


def load_config(path) -> ExperimentConfig:
    """Parse and validate one experiment JSON document. Unknown keys are
    rejected, the offending key is named in the error."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    _require(isinstance(raw, dict), "config root must be a JSON object")

    for key, value in raw.items():
        _require(key in _CONFIG_KEYS, f"unknown config key {key!r}")
        expected = _CONFIG_KEYS[key]
        ok = isinstance(value, expected)
        if ok and isinstance(value, bool) and key != "shared_road":
            ok = False  # bools are ints in Python; reject where numbers are expected
        _require(ok, f"config key {key!r} has the wrong type")

    n_vehicles = raw.get("n_vehicles", 10)
    _require(n_vehicles >= 1, "n_vehicles: must be at least 1")
    fleet = _build_fleet(raw.get("fleet", "table1"), n_vehicles)
    if isinstance(raw.get("fleet", "table1"), str):
        _require(len(fleet) == n_vehicles, "n_vehicles inconsistent with fleet")
    road = _build_road(raw.get("road", {"pole": -0.01, "gain": 0.0328}))

    speed_raw = raw.get("speed_m_s", simulation.DEFAULT_SPEED)
    if isinstance(speed_raw, list):
        _require(len(speed_raw) == len(fleet),
                 "speed_m_s: per-vehicle list must match fleet size")
        speeds = tuple(float(v) for v in speed_raw)
    else:
        speeds = (float(speed_raw),) * len(fleet)
    _require(all(v > 0 for v in speeds), "speed_m_s: speeds must be positive")

    snr_band = raw.get("snr_band", [10.0, 20.0])
    _require(len(snr_band) == 2, "snr_band: expected [low, high]")
    try:
        sensing = SensingConfig(snr_low=float(snr_band[0]),
                                snr_high=float(snr_band[1]),
                                gps_noise_std=float(raw.get("gps_noise_std_m", 0.2)))
    except Exception as exc:
        raise ConfigError(f"snr_band/gps_noise_std_m: {exc}") from exc

    schemes = tuple(raw.get("schemes", list(evaluation.SCHEMES)))
    unknown_schemes = set(schemes) - set(evaluation.SCHEMES)
    if unknown_schemes:
        raise ConfigError(f"schemes: unknown scheme {sorted(unknown_schemes)[0]!r}")

    seeds_raw = raw.get("base_seeds", {})
    unknown_seed_keys = set(seeds_raw) - {"road", "measurement", "gps", "optimizer"}
    if unknown_seed_keys:
        raise ConfigError(f"base_seeds: unknown key {sorted(unknown_seed_keys)[0]!r}")
    base_seeds = SeedBundle(
        road=int(seeds_raw.get("road", 1)),
        measurement=int(seeds_raw.get("measurement", 2)),
        gps=int(seeds_raw.get("gps", 3)),
        optimizer=int(seeds_raw.get("optimizer", 4)))

    emit_raw = raw.get("emit", {})
    unknown_emit = set(emit_raw) - _EMIT_KEYS
    if unknown_emit:
        raise ConfigError(f"emit: unknown key {sorted(unknown_emit)[0]!r}")
    emit = {key: bool(emit_raw.get(key, True)) for key in _EMIT_KEYS}

    regression_raw = raw.get("regression", "nigp")
    _require(regression_raw in ("gp", "nigp"),
             f"regression: must be 'gp' or 'nigp', got {regression_raw!r}")
    regression = gp.NOISY_INPUT if regression_raw == "nigp" else gp.STANDARD

    n_seeds = raw.get("seeds", 20)
    _require(n_seeds >= 1, "seeds: must be at least 1")
    n_steps = raw.get("n_steps", 151)
    _require(n_steps >= 2, "n_steps: must be at least 2")
    lag = raw.get("smoothing_lag", 25)
    _require(lag >= 0, "smoothing_lag: must be non-negative")
    sample_time = float(raw.get("sample_time_s", 0.01))
    _require(sample_time > 0, "sample_time_s: must be positive")
    workers = raw.get("workers", 0)
    _require(workers >= 0, "workers: must be non-negative (0 = auto)")

    return ExperimentConfig(
        name=raw.get("name", os.path.splitext(os.path.basename(path))[0]),
        fleet=fleet,
        road=road,
        speeds=speeds,
        nominal_speed=float(raw.get("nominal_speed_m_s", speeds[0])),
        sample_time=sample_time,
        n_steps=n_steps,
        sensing=sensing,
        lag=lag,
        regression=regression,
        schemes=schemes,
        n_seeds=n_seeds,
        seed_offset=raw.get("seed_offset", 0),
        base_seeds=base_seeds,
        workers=workers,
        discretization=raw.get("discretization", "zoh"),
        physical_process_noise=float(raw.get("physical_process_noise", 1e-8)),
        r_miscalibration=float(raw.get("r_miscalibration", 0.1)),
        process_disturbance=float(raw.get("process_disturbance_m_s2", 1.0)),
        sensor_bias_fraction=float(raw.get("sensor_bias_fraction", 0.5)),
        position_bias_std=float(raw.get("position_bias_std_m", 0.1)),
        shared_road=bool(raw.get("shared_road", True)),
        gp_restarts_first=raw.get("gp_restarts_first", 2),
        gp_restarts_refit=raw.get("gp_restarts_refit", 0),
        nigp_iterations=raw.get("nigp_iterations", 2),
        segment_id=raw.get("segment_id", "segment-0"),
        emit=emit,
        raw=raw,
    )


def _simulate_one(config: ExperimentConfig, scheme: str, run_index: int,
                  out_dir: str):
    """Worker: one (scheme, seed) run; writes its run directory, returns
    light metrics plus figure payload for the representative run."""
    scenario = config.scenario(run_index)
    if scheme == "averaged-kf":
        kf_result = run_collaborative(scenario, scheme="kf-only")
        metrics = simulation.averaged_trace_metrics(kf_result)
        result = kf_result
    else:
        result = run_collaborative(scenario, scheme=scheme)
        metrics = result.metrics

    run_dir = os.path.join(out_dir, scheme, f"seed_{run_index:03d}")
    if any(config.emit.values()):
        os.makedirs(run_dir, exist_ok=True)
    if config.emit["traces"]:
        result.ground_truth.to_csv(os.path.join(run_dir, "ground_truth.csv"))
        for run in result.vehicle_runs:
            run.trace.to_csv(os.path.join(run_dir, f"vehicle_{run.index + 1}_trace.csv"))
    if config.emit["gp_snapshots"]:
        for i, doc in enumerate(result.gp_snapshots, start=1):
            with open(os.path.join(run_dir, f"gp_after_{i}.json"), "w") as fh:
                json.dump(doc, fh, indent=1)
    if config.emit["metrics"]:
        write_metrics_csv(os.path.join(run_dir, "metrics.csv"), [metrics])
        with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
            json.dump({
                "tool_version": TOOL_VERSION,
                "scheme": scheme,
                "seed": run_index,
                "config_hash": config.config_hash(),
                "seeds": scenario.to_json_dict()["seeds"],
            }, fh, indent=1, sort_keys=True)
    if config.emit["cloudstate"] and result.final_cloud is not None:
        result.final_cloud.to_json(os.path.join(run_dir, "cloudstate.json"))

    payload = None
    if run_index == config.seed_offset and config.emit["figures"]:
        fig_dir = os.path.join(out_dir, "figures")
        if scheme != "averaged-kf":
            figures.plot_vehicle_traces(
                result, os.path.join(fig_dir, f"{scheme}_traces.png"))
        if result.gp_snapshots:
            truth = result.ground_truth
            figures.plot_gp_band(
                GPModel.from_json_dict(result.gp_snapshots[0]), truth,
                os.path.join(fig_dir, f"{scheme}_fit_after_1.png"),
                title=f"{scheme}: fit after 1 vehicle")
            figures.plot_gp_band(
                GPModel.from_json_dict(result.gp_snapshots[-1]), truth,
                os.path.join(fig_dir, f"{scheme}_fit_after_{len(result.gp_snapshots)}.png"),
                title=f"{scheme}: fit after {len(result.gp_snapshots)} vehicles")
            payload = result.gp_snapshots[-1]
    return scheme, run_index, metrics, payload


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    if args.seeds is not None:
        config.n_seeds = args.seeds
    if args.seed_offset is not None:
        config.seed_offset = args.seed_offset
    if args.schemes:
        unknown = set(args.schemes) - set(evaluation.SCHEMES)
        if unknown:
            raise ConfigError(f"schemes: unknown scheme {sorted(unknown)[0]!r}")
        config.schemes = tuple(args.schemes)
    if args.workers is not None:
        config.workers = args.workers

    out_dir = args.out or f"{config.name}_out"
    os.makedirs(out_dir, exist_ok=True)
    run_indices = list(range(config.seed_offset, config.seed_offset + config.n_seeds))
    jobs = [(scheme, r) for scheme in config.schemes for r in run_indices]

    workers = config.workers or (os.cpu_count() or 1)
    outputs = {}
    final_docs = {}
    if workers <= 1 or len(jobs) == 1:
        for scheme, r in jobs:
            scheme, r, metrics, payload = _simulate_one(config, scheme, r, out_dir)
            outputs[(scheme, r)] = metrics
            if payload is not None:
                final_docs[scheme] = payload
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_simulate_one, config, scheme, r, out_dir)
                       for scheme, r in jobs]
            for fut in futures:
                scheme, r, metrics, payload = fut.result()
                outputs[(scheme, r)] = metrics
                if payload is not None:
                    final_docs[scheme] = payload

    # Seed-averaged top-level metrics, one row per scheme and vehicle.
    mean_metrics = []
    summary_runs = []
    for scheme in config.schemes:
        per_seed = [outputs[(scheme, r)] for r in run_indices]
        mean_metrics.append(RunMetrics(
            scheme=scheme,
            rmse_filtered=np.mean([m.rmse_filtered for m in per_seed], axis=0),
            rmse_smoothed=np.mean([m.rmse_smoothed for m in per_seed], axis=0),
            cloud_rmse=np.mean([m.cloud_rmse for m in per_seed], axis=0),
            mean_posterior_std=np.mean([m.mean_posterior_std for m in per_seed], axis=0),
        ))
        for r, m in zip(run_indices, per_seed):
            summary_runs.append({
                "scheme": scheme, "seed": r,
                "rmse_filtered": m.rmse_filtered.tolist(),
                "rmse_smoothed": m.rmse_smoothed.tolist(),
                "cloud_rmse": m.cloud_rmse.tolist(),
                "mean_posterior_std": m.mean_posterior_std.tolist(),
                "fitted_input_noise_std": m.fitted_input_noise_std.tolist(),
            })
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), mean_metrics)

    summary = {
        "tool_version": TOOL_VERSION,
        "name": config.name,
        "config_hash": config.config_hash(),
        "schemes": list(config.schemes),
        "seed_manifest": {
            "base": {"road": config.base_seeds.road,
                     "measurement": config.base_seeds.measurement,
                     "gps": config.base_seeds.gps,
                     "optimizer": config.base_seeds.optimizer},
            "run_indices": run_indices,
        },
        "runs": summary_runs,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)

    if config.emit["figures"]:
        by_scheme = {m.scheme: m for m in mean_metrics}
        fig_dir = os.path.join(out_dir, "figures")
        figures.plot_rmse_by_vehicle(by_scheme, os.path.join(fig_dir, "rmse_by_vehicle.png"))
        figures.plot_cloud_rmse(by_scheme, os.path.join(fig_dir, "cloud_rmse.png"))
        if {"gp-psm", "nigp-psm"} <= set(final_docs):
            gp_model = GPModel.from_json_dict(final_docs["gp-psm"])
            nigp_model = GPModel.from_json_dict(final_docs["nigp-psm"])
            lo = float(gp_model.train_inputs.min())
            hi = float(gp_model.train_inputs.max())
            grid = np.linspace(lo, hi, 400)
            figures.plot_posterior_std_comparison(
                grid,
                {"gp-psm": np.sqrt(gp_model.predict(grid)[1]),
                 "nigp-psm": np.sqrt(nigp_model.predict(grid)[1])},
                os.path.join(fig_dir, "posterior_std_comparison.png"))

    print(f"wrote {out_dir} ({len(jobs)} runs, {len(config.schemes)} schemes)")
    return 0


def _random_stable_system(rng: np.random.Generator):
    n = int(rng.integers(2, 6))
    A = rng.standard_normal((n, n))
    radius = max(abs(np.linalg.eigvals(A)))
    A *= rng.uniform(0.5, 0.95) / radius
    r = int(rng.integers(1, n))
    sensed = rng.choice(n - 1, size=r, replace=False)
    C = np.zeros((r, n))
    C[np.arange(r), sensed] = 1.0
    sigma_prior = float(rng.uniform(0.5, 2.0))
    sigma_meas = float(rng.uniform(0.5, 2.0))
    return A, C, sigma_prior, sigma_meas


def cmd_prop1(args) -> int:
    if args.systems < 1:
        raise ConfigError("--systems must be at least 1")
    if args.horizon < 1:
        raise ConfigError("--horizon must be at least 1")
    rng = np.random.default_rng(args.seed)
    lines = [
        f"pseudo-measurement MMSE benefit check: {args.systems} random systems, "
        f"horizon {args.horizon}, seed {args.seed}",
        "system,n_states,n_sensors,mmse_base,mmse_extra,min_rel_margin",
    ]
    violations = 0
    skipped = 0
    for idx in range(args.systems):
        A, C, sp, sv = _random_stable_system(rng)
        n = A.shape[0]
        selector = np.zeros((1, n))
        selector[0, n - 1] = 1.0
        C_extra = np.vstack([C, selector])
        try:
            margins = []
            for k in range(args.horizon + 1):
                base = mmse_oracle(A, C, args.horizon, sp, sv, k)
                extra = mmse_oracle(A, C_extra, args.horizon, sp, sv, k)
                margins.append((base - extra) / base)
            base_end = mmse_oracle(A, C, args.horizon, sp, sv, args.horizon)
            extra_end = mmse_oracle(A, C_extra, args.horizon, sp, sv, args.horizon)
        except NumericalError:
            skipped += 1
            continue
        min_margin = min(margins)
        if min_margin < 1e-12:
            violations += 1
        lines.append(f"{idx},{n},{C.shape[0]},{base_end:.17g},{extra_end:.17g},"
                     f"{min_margin:.17g}")
    lines.append(f"violations: {violations}")
    lines.append(f"skipped (ill-conditioned): {skipped}")
    report = "\n".join(lines) + "\n"
    sys.stdout.write(report)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report)
    return 1 if violations else 0


def cmd_gpfit(args) -> int:
    try:
        data = np.loadtxt(args.dataset, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {args.dataset}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"dataset {args.dataset} is not a two-column CSV: {exc}") from exc
    if data.shape[0] < 2 or data.shape[1] < 2:
        raise ConfigError("dataset must contain at least 2 rows of (s_m, w_m)")
    s, w = data[:, 0], data[:, 1]

    mode = gp.NOISY_INPUT if args.mode == "nigp" else gp.STANDARD
    model = gp.fit(s, w, mode=mode, restarts=args.restarts, seed=args.seed)

    os.makedirs(args.out, exist_ok=True)
    model.to_json(os.path.join(args.out, "model.json"))
    grid = np.linspace(float(s.min()), float(s.max()), 4 * len(s))
    mean, var = model.predict(grid)
    np.savetxt(os.path.join(args.out, "predictions.csv"),
               np.column_stack([grid, mean, np.sqrt(var)]),
               delimiter=",", comments="", header="s_m,mean_m,std_m", fmt="%.17g")
    figures.plot_gp_band(model, None, os.path.join(args.out, "fit.png"),
                         title=f"{args.mode} fit of {os.path.basename(args.dataset)}")
    hp = model.hyperparams
    print(f"fitted {args.mode}: signal_std={hp.signal_std:.6g} "
          f"lengthscale={hp.lengthscale:.6g} noise_std={hp.noise_std:.6g}"
          + (f" input_noise_std={hp.input_noise_std:.6g}"
             if hp.input_noise_std is not None else ""))
    return 0


def cmd_resume(args) -> int:
    config = load_config(args.config)
    try:
        state = CloudState.from_json(args.state)
    except OSError as exc:
        raise ConfigError(f"cannot read cloud state {args.state}: {exc}") from exc
    done = len(state.dataset)
    total = len(config.fleet)
    if args.vehicles is not None:
        total = min(total, done + args.vehicles)
    if done >= total:
        print(f"nothing to resume: {done} contributions already present")
        return 0

    scenario = config.scenario(config.seed_offset)
    scheme = "nigp-psm" if state.mode == gp.NOISY_INPUT else "gp-psm"
    os.makedirs(args.out, exist_ok=True)

    rows = []
    for i in range(done, total):
        channel = download(state, scenario.speeds[i],
                           query_noise_std=scenario.sensing.gps_noise_std)
        run = simulation.run_vehicle(scenario, i, channel)
        state = upload(state, Contribution(
            vehicle_id=i + 1, positions=run.trace.positions,
            road_estimates=run.trace.road_smoothed,
            speed=scenario.speeds[i], timestamp=i))
        run.trace.to_csv(os.path.join(args.out, f"vehicle_{i + 1}_trace.csv"))
        err = evaluation.rmse(run.trace.road_smoothed, run.truth_road)
        rows.append((i + 1, err))
        print(f"vehicle {i + 1}: smoothed road RMSE {err:.6g} m")

    state.to_json(os.path.join(args.out, "cloudstate.json"))
    if config.emit["figures"] and state.model is not None:
        figures.plot_gp_band(state.model, None,
                             os.path.join(args.out, "fit_after_resume.png"),
                             title=f"{scheme}: fit after {total} vehicles")
    with open(os.path.join(args.out, "resume_metrics.csv"), "w") as fh:
        fh.write("vehicle_index,rmse_smoothed_m\n")
        for idx, err in rows:
            fh.write(f"{idx},{err:.17g}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdroad",
        description="Collaborative road-profile estimation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run schemes over seeded repetitions")
    p_sim.add_argument("--config", required=True, help="experiment JSON document")
    p_sim.add_argument("--out", help="output directory (default <name>_out)")
    p_sim.add_argument("--seeds", type=int, help="number of seeded repetitions")
    p_sim.add_argument("--seed-offset", type=int, dest="seed_offset",
                       help="first run index")
    p_sim.add_argument("--schemes", nargs="+", help="subset of schemes to run")
    p_sim.add_argument("--workers", type=int, help="worker processes (0 = auto)")
    p_sim.set_defaults(func=cmd_simulate)

    p_prop = sub.add_parser(
        "prop1", help="verify the pseudo-measurement MMSE benefit on random systems")
    p_prop.add_argument("--systems", type=int, default=50)
    p_prop.add_argument("--horizon", type=int, default=10)
    p_prop.add_argument("--seed", type=int, default=0)
    p_prop.add_argument("--out", help="also write the report to this file")
    p_prop.set_defaults(func=cmd_prop1)

    p_fit = sub.add_parser("gpfit", help="fit a regression to a (s_m, w_m) CSV")
    p_fit.add_argument("dataset", help="CSV with columns s_m,w_m")
    p_fit.add_argument("--mode", choices=["gp", "nigp"], default="gp")
    p_fit.add_argument("--out", required=True, help="output directory")
    p_fit.add_argument("--restarts", type=int, default=5)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.set_defaults(func=cmd_gpfit)

    p_res = sub.add_parser("resume", help="continue a run from a saved cloud state")
    p_res.add_argument("--state", required=True, help="cloudstate JSON")
    p_res.add_argument("--config", required=True, help="experiment JSON document")
    p_res.add_argument("--out", required=True, help="output directory")
    p_res.add_argument("--vehicles", type=int, help="limit on additional vehicles")
    p_res.set_defaults(func=cmd_resume)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
