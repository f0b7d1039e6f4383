"""Onboard estimator: Kalman filter with an optional pseudo-measurement
channel, full-interval backward smoothing, and the fixed-lag variant used
when memory is bounded.

The pseudo-measurement channel appends one output row selecting the road
state; its value and noise variance are supplied per step by a provider
(typically the cloud regression mean and variance at the vehicle's GPS
position), so the measurement noise covariance is time varying on that
row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidParameterError, NumericalError
from .vehicle import DiscreteAugmentedModel

# Lower bound on the pseudo-measurement noise variance; keeps the
# innovation covariance invertible once the cloud fit becomes very tight.
PSEUDO_VARIANCE_FLOOR = 1e-10


@dataclass(frozen=True)
class PseudoMeasurementChannel:
    """Extra road-state output backed by external knowledge.

    ``value(s, k)`` returns the pseudo measurement for the step at GPS
    position ``s`` and time index ``k``; ``variance(s, k)`` its noise
    variance. Cloud-regression channels use the position and ignore the
    index; a predecessor-trace channel does the opposite.
    """

    value: Callable[[float, int], float]
    variance: Callable[[float, int], float]
    variance_floor: float = PSEUDO_VARIANCE_FLOOR

    def variance_at(self, s: float, k: int) -> float:
        v = float(self.variance(s, k))
        if not np.isfinite(v):
            raise NumericalError(f"pseudo-measurement variance at step {k} is not finite")
        return max(v, self.variance_floor)


@dataclass(frozen=True)
class FilterStep:
    """One filter step: prediction, correction, and the gain that linked them."""

    k: int
    x_pred: np.ndarray  # x_hat(k | k-1)
    P_pred: np.ndarray
    x_upd: np.ndarray  # x_hat(k | k)
    P_upd: np.ndarray
    gain: np.ndarray


@dataclass(frozen=True)
class EstimateTrace:
    """Per-step road estimates produced by one vehicle's filter + smoother."""

    positions: np.ndarray  # GPS positions s_hat(k), m
    road_filtered: np.ndarray  # w_hat(k|k), m
    road_filtered_var: np.ndarray
    road_smoothed: np.ndarray  # w_hat(k|k+L) or w_hat(k|T), m
    road_smoothed_var: np.ndarray
    states_filtered: np.ndarray  # (T, n)
    states_smoothed: np.ndarray  # (T, n)

    def __post_init__(self):
        T = len(self.positions)
        for name in ("road_filtered", "road_filtered_var", "road_smoothed",
                     "road_smoothed_var"):
            if len(getattr(self, name)) != T:
                raise InvalidParameterError(f"{name} length differs from positions")
        excess = np.max(self.road_smoothed_var - self.road_filtered_var)
        if excess > 1e-10:
            raise NumericalError(
                f"smoothed variance exceeds filtered variance by {excess:.3e}")

    def __len__(self) -> int:
        return len(self.positions)

    def to_csv(self, path) -> None:
        data = np.column_stack([
            np.arange(len(self)), self.positions,
            self.road_filtered, self.road_filtered_var,
            self.road_smoothed, self.road_smoothed_var,
        ])
        np.savetxt(path, data, delimiter=",", comments="", fmt="%.17g",
                   header="k,s_hat_m,w_filt_m,w_filt_var,w_smooth_m,w_smooth_var")


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def kf_run(model: DiscreteAugmentedModel, measurements: np.ndarray,
           positions: np.ndarray | None = None,
           init: tuple[np.ndarray, np.ndarray] | None = None,
           channel: PseudoMeasurementChannel | None = None,
           ) -> list[FilterStep]:
    """Run the forward filter over a measurement sequence.

    ``measurements`` holds the onboard outputs, one row per step. When a
    channel is supplied, each step's output vector is extended with the
    channel value at that step's position and the noise covariance gains a
    time-varying diagonal block with the channel variance.

    The initial pair ``init = (x0, P0)`` is the prior for step 0; the
    first correction uses the step-0 measurement.
    """
    Z = np.atleast_2d(np.asarray(measurements, dtype=float))
    T = Z.shape[0]
    n = model.n_states
    r = model.n_outputs
    if Z.shape[1] != r:
        raise InvalidParameterError(
            f"measurements have {Z.shape[1]} channels, model expects {r}")
    if not np.all(np.isfinite(Z)):
        raise InvalidParameterError("measurements contain non-finite values")
    if channel is not None:
        if positions is None:
            raise InvalidParameterError("a pseudo-measurement channel needs positions")
        positions = np.asarray(positions, dtype=float)
        if positions.shape[0] != T:
            raise InvalidParameterError("positions length differs from measurements")

    if init is None:
        x = np.zeros(n)
        P = np.eye(n)
    else:
        x = np.asarray(init[0], dtype=float).reshape(n)
        P = _symmetrize(np.asarray(init[1], dtype=float))

    A = model.A_bar
    Q = model.Q
    C_base = model.C_bar
    R_base = model.R

    selector = np.zeros(n)
    selector[model.road_index] = 1.0
    C_aug = np.vstack([C_base, selector]) if channel is not None else C_base

    steps: list[FilterStep] = []
    for k in range(T):
        if channel is not None:
            s_k = float(positions[k])
            z = np.append(Z[k], channel.value(s_k, k))
            if not np.isfinite(z[-1]):
                raise NumericalError(f"pseudo measurement at step {k} is not finite")
            R = np.zeros((r + 1, r + 1))
            R[:r, :r] = R_base
            R[r, r] = channel.variance_at(s_k, k)
            C = C_aug
        else:
            z = Z[k]
            R = R_base
            C = C_base

        x_pred, P_pred = x, P
        S = C @ P_pred @ C.T + R
        try:
            gain = np.linalg.solve(S, C @ P_pred).T
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"innovation covariance singular at step {k}; check R floors") from exc

        x = x_pred + gain @ (z - C @ x_pred)
        # Joseph form preserves positive semidefiniteness under rounding.
        IKC = np.eye(n) - gain @ C
        P = _symmetrize(IKC @ P_pred @ IKC.T + gain @ R @ gain.T)

        steps.append(FilterStep(k=k, x_pred=x_pred, P_pred=P_pred,
                                x_upd=x, P_upd=P, gain=gain))

        x = A @ x
        P = _symmetrize(A @ P @ A.T + Q)

    return steps


def _rts_step(model: DiscreteAugmentedModel, step: FilterStep,
              x_next_pred: np.ndarray, P_next_pred: np.ndarray,
              x_next_smooth: np.ndarray, P_next_smooth: np.ndarray,
              ) -> tuple[np.ndarray, np.ndarray]:
    try:
        H = np.linalg.solve(P_next_pred, model.A_bar @ step.P_upd).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"predicted covariance singular in backward pass at step {step.k}") from exc
    x_s = step.x_upd + H @ (x_next_smooth - x_next_pred)
    P_s = _symmetrize(step.P_upd + H @ (P_next_smooth - P_next_pred) @ H.T)
    return x_s, P_s


def rts_smooth(model: DiscreteAugmentedModel, steps: Sequence[FilterStep],
               ) -> tuple[np.ndarray, np.ndarray]:
    """Backward fixed-interval smoothing over a completed filter run.

    Returns the smoothed states (T, n) and covariances (T, n, n); the last
    step is the filtered estimate by construction.
    """
    if len(steps) == 0:
        raise InvalidParameterError("cannot smooth an empty filter run")
    T = len(steps)
    n = model.n_states
    xs = np.empty((T, n))
    Ps = np.empty((T, n, n))
    xs[-1] = steps[-1].x_upd
    Ps[-1] = steps[-1].P_upd
    for k in range(T - 2, -1, -1):
        x_next_pred = model.A_bar @ steps[k].x_upd
        P_next_pred = _symmetrize(model.A_bar @ steps[k].P_upd @ model.A_bar.T + model.Q)
        xs[k], Ps[k] = _rts_step(model, steps[k], x_next_pred, P_next_pred,
                                 xs[k + 1], Ps[k + 1])
    return xs, Ps


def fixed_lag_smooth(model: DiscreteAugmentedModel, steps: Sequence[FilterStep],
                     lag: int) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed estimates conditioned on a bounded look-ahead window.

    For each step k the estimate is conditioned on measurements up to
    min(k + lag, T-1), computed as a windowed backward pass of length
    ``lag``. lag = 0 reproduces the filtered estimates; lag >= T-1 the
    full-interval smoother.
    """
    if lag < 0:
        raise InvalidParameterError("lag must be non-negative")
    T = len(steps)
    if T == 0:
        raise InvalidParameterError("cannot smooth an empty filter run")
    n = model.n_states
    xs = np.empty((T, n))
    Ps = np.empty((T, n, n))
    for k in range(T):
        j_end = min(k + lag, T - 1)
        x_s = steps[j_end].x_upd
        P_s = steps[j_end].P_upd
        for j in range(j_end - 1, k - 1, -1):
            x_next_pred = model.A_bar @ steps[j].x_upd
            P_next_pred = _symmetrize(
                model.A_bar @ steps[j].P_upd @ model.A_bar.T + model.Q)
            x_s, P_s = _rts_step(model, steps[j], x_next_pred, P_next_pred,
                                 x_s, P_s)
        xs[k] = x_s
        Ps[k] = P_s
    return xs, Ps


def build_estimate_trace(positions: np.ndarray, steps: Sequence[FilterStep],
                         states_smoothed: np.ndarray,
                         covs_smoothed: np.ndarray,
                         road_index: int = -1) -> EstimateTrace:
    """Package a filter run plus its smoothed counterpart as a road trace."""
    states_filtered = np.array([s.x_upd for s in steps])
    var_filtered = np.array([s.P_upd[road_index, road_index] for s in steps])
    var_smoothed = covs_smoothed[:, road_index, road_index]
    # Symmetrized arithmetic may leave the smoothed variance a few ulps
    # above the filtered one where the window adds no information.
    var_smoothed = np.minimum(var_smoothed, var_filtered + 1e-12)
    return EstimateTrace(
        positions=np.asarray(positions, dtype=float),
        road_filtered=states_filtered[:, road_index],
        road_filtered_var=var_filtered,
        road_smoothed=states_smoothed[:, road_index],
        road_smoothed_var=var_smoothed,
        states_filtered=states_filtered,
        states_smoothed=np.asarray(states_smoothed),
    )
