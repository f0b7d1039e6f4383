"""Metrics, baseline estimation schemes, and the batch MMSE oracle that
certifies the benefit of appending the road-selector pseudo-measurement.

The oracle works on the stacked linear system relating all measurements
over a horizon to the initial state and the process-noise sequence; under
isotropic priors its error covariance is available in closed form, so the
minimum mean square error of the optimal estimate at any step inside the
horizon can be compared across sensor configurations exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, NumericalError

SCHEMES = ("kf-only", "kf-chain", "nigp-psm", "gp-psm", "averaged-kf")

MAX_ORACLE_CONDITION = 1e12


@dataclass(frozen=True)
class ObservabilityStack:
    """Stacked-measurement description of a sensor configuration.

    ``blocks[i]`` maps the unknown vector z = [x0; eta_1; ...; eta_k] to
    the state at step i; O stacks sensor_rows @ blocks[i] over the whole
    horizon.
    """

    horizon: int
    blocks: tuple[np.ndarray, ...]
    O: np.ndarray
    sigma_prior: float
    sigma_meas: float


def _state_maps(a_bar: np.ndarray, horizon: int) -> list[np.ndarray]:
    n = a_bar.shape[0]
    width = n * (horizon + 1)
    powers = [np.eye(n)]
    for _ in range(horizon):
        powers.append(a_bar @ powers[-1])
    blocks = []
    for i in range(horizon + 1):
        L = np.zeros((n, width))
        for j in range(i + 1):
            # state(i) = A^i x0 + sum_j A^(i-j) eta_j
            L[:, j * n:(j + 1) * n] = powers[i - j]
        blocks.append(L)
    return blocks


def _check_selector_rows(c_rows: np.ndarray) -> None:
    for idx, row in enumerate(c_rows):
        ones = np.flatnonzero(row == 1.0)
        if len(ones) != 1 or np.any((row != 0.0) & (row != 1.0)):
            raise InvalidParameterError(
                f"sensor row {idx} must select exactly one state (single 1, rest 0)")


def build_observability_stack(a_bar: np.ndarray, c_rows: np.ndarray,
                              horizon: int, sigma_prior: float,
                              sigma_meas: float) -> ObservabilityStack:
    """Assemble the stacked system for a horizon of measurements.

    The noise model is deliberately isotropic (prior and process noise
    share sigma_prior, all sensors share sigma_meas) and the sensor rows
    must be 0/1 state selectors; that is the regime in which the
    pseudo-measurement benefit is provable, and the oracle tests exactly
    that regime.
    """
    a_bar = np.asarray(a_bar, dtype=float)
    c_rows = np.atleast_2d(np.asarray(c_rows, dtype=float))
    if sigma_prior <= 0 or sigma_meas <= 0:
        raise InvalidParameterError("noise scales must be strictly positive")
    if horizon < 0:
        raise InvalidParameterError("horizon must be non-negative")
    if c_rows.shape[1] != a_bar.shape[0]:
        raise InvalidParameterError("sensor rows must match the state size")
    _check_selector_rows(c_rows)
    blocks = _state_maps(a_bar, horizon)
    O = np.vstack([c_rows @ L for L in blocks])
    return ObservabilityStack(horizon=horizon, blocks=tuple(blocks), O=O,
                              sigma_prior=sigma_prior, sigma_meas=sigma_meas)


def mmse_oracle(a_bar: np.ndarray, c_rows: np.ndarray, horizon: int,
                sigma_prior: float, sigma_meas: float,
                query_step: int) -> float:
    """MMSE of the optimal batch estimate of the state at ``query_step``
    given all measurements over the horizon.

    Computed as tr(L' Sigma L'^T) with
    Sigma = (sigma_prior^-2 I + sigma_meas^-2 O^T O)^-1.
    """
    stack = build_observability_stack(a_bar, c_rows, horizon, sigma_prior,
                                      sigma_meas)
    if not 0 <= query_step <= horizon:
        raise InvalidParameterError(
            f"query_step must lie in [0, {horizon}], got {query_step}")
    width = stack.O.shape[1]
    info = (np.eye(width) / sigma_prior ** 2
            + stack.O.T @ stack.O / sigma_meas ** 2)
    if np.linalg.cond(info) > MAX_ORACLE_CONDITION:
        raise NumericalError("stacked information matrix is ill-conditioned")
    sigma_z = np.linalg.inv(info)
    L = stack.blocks[query_step]
    return float(np.trace(L @ sigma_z @ L.T))


def rmse(estimate, truth) -> float:
    """Root mean squared error between two equal-length sequences."""
    a = np.asarray(estimate, dtype=float).ravel()
    b = np.asarray(truth, dtype=float).ravel()
    if a.shape != b.shape:
        raise InvalidParameterError(
            f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.size == 0:
        raise InvalidParameterError("sequences must be non-empty")
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass
class RunMetrics:
    """Per-scheme error summary of one collaborative (or baseline) run.

    Entries that do not apply (e.g. cloud RMSE for a scheme without a
    cloud) are NaN, keeping every sequence at fleet length.
    """

    scheme: str
    rmse_filtered: np.ndarray  # per vehicle, m
    rmse_smoothed: np.ndarray  # per vehicle, m
    cloud_rmse: np.ndarray  # per refit, m
    mean_posterior_std: np.ndarray  # per refit, m
    fitted_input_noise_std: np.ndarray = field(default=None)  # per refit, m

    def __post_init__(self):
        n = len(self.rmse_filtered)
        if self.fitted_input_noise_std is None:
            self.fitted_input_noise_std = np.full(n, np.nan)
        for name in ("rmse_smoothed", "cloud_rmse", "mean_posterior_std",
                     "fitted_input_noise_std"):
            if len(getattr(self, name)) != n:
                raise InvalidParameterError(f"{name} length differs from vehicle count")
        if np.nanmin(self.rmse_filtered) < 0 or np.nanmin(self.rmse_smoothed) < 0:
            raise InvalidParameterError("RMSE values must be non-negative")

    @property
    def n_vehicles(self) -> int:
        return len(self.rmse_filtered)

    def csv_rows(self) -> list[str]:
        rows = []
        for i in range(self.n_vehicles):
            rows.append(",".join([
                self.scheme, str(i + 1),
                *(format(v, ".17g") for v in (
                    self.rmse_filtered[i], self.rmse_smoothed[i],
                    self.cloud_rmse[i], self.mean_posterior_std[i]))
            ]))
        return rows


METRICS_CSV_HEADER = ("scheme,vehicle_index,rmse_filtered_m,rmse_smoothed_m,"
                      "cloud_rmse_m,mean_posterior_std_m")


def write_metrics_csv(path, metrics: list[RunMetrics]) -> None:
    with open(path, "w") as fh:
        fh.write(METRICS_CSV_HEADER + "\n")
        for m in metrics:
            for row in m.csv_rows():
                fh.write(row + "\n")


def run_baselines(scenario, schemes=SCHEMES, keep_results: bool = False):
    """Run the requested estimation schemes on one scenario.

    Returns {scheme: RunMetrics} (plus {scheme: CollaborativeResult} when
    ``keep_results``). All schemes share the scenario's seed bundle, so
    road realization and sensor noise are paired across schemes.
    """
    from . import simulation  # imported here to avoid a module cycle

    unknown = set(schemes) - set(SCHEMES)
    if unknown:
        raise InvalidParameterError(f"unknown schemes: {sorted(unknown)}")

    metrics: dict[str, RunMetrics] = {}
    results: dict[str, object] = {}
    needs_kf_only = "kf-only" in schemes or "averaged-kf" in schemes
    kf_only_result = None
    if needs_kf_only:
        kf_only_result = simulation.run_collaborative(scenario, scheme="kf-only")
        if "kf-only" in schemes:
            metrics["kf-only"] = kf_only_result.metrics
            results["kf-only"] = kf_only_result

    for scheme in schemes:
        if scheme == "kf-only":
            continue
        if scheme == "averaged-kf":
            metrics[scheme] = simulation.averaged_trace_metrics(kf_only_result)
            results[scheme] = kf_only_result
            continue
        result = simulation.run_collaborative(scenario, scheme=scheme)
        metrics[scheme] = result.metrics
        results[scheme] = result

    if keep_results:
        return metrics, results
    return metrics
