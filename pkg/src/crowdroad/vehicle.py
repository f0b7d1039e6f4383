"""Quarter-car suspension dynamics, the stochastic road-input model, and
their discretization into the augmented state-space form used by the
onboard estimators.

The physical plant is a two-mass quarter car with states
[sprung displacement, sprung velocity, unsprung displacement, unsprung
velocity]; the road elevation acts on the unsprung mass through the tire
stiffness. The road itself is modeled as a first-order low-pass filter
driven by unit-intensity white noise, and is appended as a fifth state so
a single linear observer can estimate both the vehicle motion and the
road.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from .errors import InvalidParameterError, NumericalError

DiscretizationMethod = str  # "zoh" (exact, default) or "euler"

# Small diagonal process noise on the physical states; the road channel
# noise is computed exactly, this term covers unmodeled dynamics.
DEFAULT_PHYSICAL_PROCESS_NOISE = 1e-8


@dataclass(frozen=True)
class QuarterCarParams:
    """Physical parameters of one vehicle's quarter-car suspension (SI units)."""

    sprung_mass: float  # kg
    unsprung_mass: float  # kg
    spring_stiffness: float  # N/m
    tire_stiffness: float  # N/m
    suspension_damping: float  # N*s/m
    tire_damping: float = 0.0  # N*s/m, nonzero only for test-rig configs

    def __post_init__(self):
        for name in ("sprung_mass", "unsprung_mass", "spring_stiffness",
                     "tire_stiffness"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameterError(
                    f"{name} must be strictly positive, got {value!r}")
        for name in ("suspension_damping", "tire_damping"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidParameterError(
                    f"{name} must be non-negative, got {value!r}")


@dataclass(frozen=True)
class RoadModelParams:
    """First-order road model ``w_dot = pole * w + gain * e`` with e a
    unit-intensity white noise.

    The (pole, gain) pair may optionally be backed by the physical triple
    (roughness G_r, speed V, cutoff w0) through pole = -w0 and
    gain = sqrt(2*pi*G_r*V); when the triple is given it must be
    consistent with the stored pair.
    """

    pole: float  # 1/s, strictly negative
    gain: float  # intensity scale
    roughness: float | None = None  # G_r
    speed: float | None = None  # V, m/s
    cutoff: float | None = None  # w0, rad/s

    def __post_init__(self):
        if not (math.isfinite(self.pole) and self.pole < 0):
            raise InvalidParameterError(
                f"road pole must be strictly negative, got {self.pole!r}")
        if not math.isfinite(self.gain):
            raise InvalidParameterError(f"road gain must be finite, got {self.gain!r}")
        triple = (self.roughness, self.speed, self.cutoff)
        if any(v is not None for v in triple):
            if any(v is None for v in triple):
                raise InvalidParameterError(
                    "roughness, speed and cutoff must be given together")
            derived_pole = -self.cutoff
            derived_gain = math.sqrt(2.0 * math.pi * self.roughness * self.speed)
            if abs(derived_pole - self.pole) > 1e-12 * abs(self.pole):
                raise InvalidParameterError(
                    f"pole {self.pole} inconsistent with cutoff {self.cutoff}")
            if abs(derived_gain - self.gain) > 1e-12 * abs(self.gain):
                raise InvalidParameterError(
                    f"gain {self.gain} inconsistent with sqrt(2*pi*G_r*V) = {derived_gain}")

    @classmethod
    def from_roughness(cls, roughness: float, speed: float, cutoff: float
                       ) -> "RoadModelParams":
        if roughness <= 0 or speed <= 0 or cutoff <= 0:
            raise InvalidParameterError(
                "roughness, speed and cutoff must be strictly positive")
        return cls(pole=-cutoff,
                   gain=math.sqrt(2.0 * math.pi * roughness * speed),
                   roughness=roughness, speed=speed, cutoff=cutoff)


@dataclass(frozen=True)
class ContinuousModel:
    """Continuous-time quarter-car state space.

    ``x_dot = A x + road_input * w + road_rate_input * w_dot`` with
    outputs ``y = C x`` (sprung displacement and suspension deflection).
    The road-rate column is zero unless the tire has damping.
    """

    A: np.ndarray  # (4, 4)
    road_input: np.ndarray  # (4,)
    road_rate_input: np.ndarray  # (4,)
    C: np.ndarray  # (2, 4)
    params: QuarterCarParams


@dataclass(frozen=True)
class DiscreteAugmentedModel:
    """Discrete-time model with the road appended as the last state.

    ``x_bar(k+1) = A_bar x_bar(k) + B_bar u(k) + noise`` with process noise
    covariance Q and measurement noise covariance R for outputs
    ``y(k) = C_bar x_bar(k) + v(k)``. The road state is always the last
    component.
    """

    A_bar: np.ndarray  # (n+1, n+1)
    B_bar: np.ndarray  # (n+1, m); m = 0 for the passive suspension
    C_bar: np.ndarray  # (r, n+1)
    Q: np.ndarray  # (n+1, n+1), symmetric PSD
    R: np.ndarray  # (r, r), symmetric PD
    sample_time: float  # s
    road_gain_discrete: float = field(default=0.0)  # std of the road-state innovation

    def __post_init__(self):
        n = self.A_bar.shape[0]
        if self.A_bar.shape != (n, n) or not np.all(np.isfinite(self.A_bar)):
            raise InvalidParameterError("A_bar must be square and finite")
        if self.sample_time <= 0:
            raise InvalidParameterError("sample_time must be positive")
        if self.C_bar.shape[1] != n:
            raise InvalidParameterError("C_bar column count must match state size")
        _check_symmetric_psd(self.Q, "Q")
        _check_symmetric_pd(self.R, "R")

    @property
    def n_states(self) -> int:
        return self.A_bar.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.C_bar.shape[0]

    @property
    def road_index(self) -> int:
        return self.A_bar.shape[0] - 1

    def with_measurement_noise(self, R: np.ndarray) -> "DiscreteAugmentedModel":
        return replace(self, R=np.asarray(R, dtype=float))

    def stationary_road_variance(self) -> float:
        a_d = self.A_bar[self.road_index, self.road_index]
        denom = 1.0 - a_d * a_d
        if denom <= 0:
            raise NumericalError("road state is not strictly stable")
        return self.road_gain_discrete ** 2 / denom


def _check_symmetric_psd(M: np.ndarray, name: str, tol: float = 1e-12) -> None:
    if not np.all(np.isfinite(M)):
        raise InvalidParameterError(f"{name} has non-finite entries")
    if np.max(np.abs(M - M.T)) > 1e-10 * max(1.0, np.max(np.abs(M))):
        raise InvalidParameterError(f"{name} is not symmetric")
    eigs = np.linalg.eigvalsh(0.5 * (M + M.T))
    if eigs.min() < -tol * max(1.0, eigs.max()):
        raise InvalidParameterError(f"{name} is not positive semidefinite")


def _check_symmetric_pd(M: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(M)):
        raise InvalidParameterError(f"{name} has non-finite entries")
    if np.max(np.abs(M - M.T)) > 1e-10 * max(1.0, np.max(np.abs(M))):
        raise InvalidParameterError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise InvalidParameterError(f"{name} is not positive definite") from exc


def build_continuous_model(params: QuarterCarParams) -> ContinuousModel:
    """Assemble the continuous quarter-car state space.

    States are [sprung disp., sprung vel., unsprung disp., unsprung vel.];
    the outputs are the sprung displacement and the suspension deflection
    (sprung minus unsprung displacement).
    """
    m_s = params.sprung_mass
    m_us = params.unsprung_mass
    k_s = params.spring_stiffness
    k_t = params.tire_stiffness
    c = params.suspension_damping
    c_t = params.tire_damping

    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-k_s / m_s, -c / m_s, k_s / m_s, c / m_s],
        [0.0, 0.0, 0.0, 1.0],
        [k_s / m_us, c / m_us, -(k_s + k_t) / m_us, -(c + c_t) / m_us],
    ])
    road_input = np.array([0.0, 0.0, 0.0, k_t / m_us])
    road_rate_input = np.array([0.0, 0.0, 0.0, c_t / m_us])
    C = np.array([
        [1.0, 0.0, 0.0, 0.0],
        [1.0, 0.0, -1.0, 0.0],
    ])
    return ContinuousModel(A=A, road_input=road_input,
                           road_rate_input=road_rate_input, C=C, params=params)


def discretize_road(road: RoadModelParams, sample_time: float,
                    method: DiscretizationMethod = "zoh") -> tuple[float, float]:
    """Discretize the scalar road model into ``w(k+1) = a_d w(k) + b_d e(k)``
    with e(k) ~ N(0, 1).

    The exact method integrates the white-noise intensity over one sample
    interval; Euler uses the first-order approximation b*sqrt(T_s).
    """
    if sample_time <= 0:
        raise InvalidParameterError("sample_time must be positive")
    a, b = road.pole, road.gain
    if method == "zoh":
        a_d = math.exp(a * sample_time)
        var = b * b * (a_d * a_d - 1.0) / (2.0 * a)
        return a_d, math.sqrt(var)
    if method == "euler":
        return 1.0 + a * sample_time, b * math.sqrt(sample_time)
    raise InvalidParameterError(f"unknown discretization method {method!r}")


def _zoh_process_noise(A: np.ndarray, noise_input: np.ndarray,
                       sample_time: float) -> np.ndarray:
    """Exact covariance of the sampled response to unit-intensity white
    noise entering through ``noise_input`` (Van Loan construction)."""
    n = A.shape[0]
    GQG = np.outer(noise_input, noise_input)
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -A
    M[:n, n:] = GQG
    M[n:, n:] = A.T
    Phi = expm(M * sample_time)
    Ad = Phi[n:, n:].T
    Qd = Ad @ Phi[:n, n:]
    return 0.5 * (Qd + Qd.T)


def augment_and_discretize(cont: ContinuousModel, road: RoadModelParams,
                           sample_time: float,
                           method: DiscretizationMethod = "zoh",
                           physical_process_noise: float = DEFAULT_PHYSICAL_PROCESS_NOISE,
                           measurement_noise: np.ndarray | None = None,
                           ) -> DiscreteAugmentedModel:
    """Append the road state and discretize the augmented system.

    The augmented continuous matrix has the road pole in its last diagonal
    entry; the road feeds the unsprung-mass acceleration through the tire.
    Process noise covariance is the exact sampled-noise integral of the
    white-noise channel (or its first-order approximation under Euler),
    plus a small configurable diagonal on the physical states.
    """
    if sample_time <= 0:
        raise InvalidParameterError("sample_time must be positive")
    if physical_process_noise < 0:
        raise InvalidParameterError("physical_process_noise must be non-negative")

    n = cont.A.shape[0]
    a, b = road.pole, road.gain

    A_aug = np.zeros((n + 1, n + 1))
    A_aug[:n, :n] = cont.A
    # With tire damping, w_dot = a*w + b*e folds into the coupling column.
    A_aug[:n, n] = cont.road_input + cont.road_rate_input * a
    A_aug[n, n] = a

    noise_input = np.zeros(n + 1)
    noise_input[:n] = cont.road_rate_input * b
    noise_input[n] = b

    if method == "zoh":
        A_bar = expm(A_aug * sample_time)
        Q = _zoh_process_noise(A_aug, noise_input, sample_time)
    elif method == "euler":
        A_bar = np.eye(n + 1) + A_aug * sample_time
        Q = np.outer(noise_input, noise_input) * sample_time
    else:
        raise InvalidParameterError(f"unknown discretization method {method!r}")

    if not np.all(np.isfinite(A_bar)):
        raise NumericalError("discretized transition matrix has non-finite entries")

    Q = Q + np.diag([physical_process_noise] * n + [0.0])

    C_bar = np.zeros((cont.C.shape[0], n + 1))
    C_bar[:, :n] = cont.C

    if measurement_noise is None:
        measurement_noise = np.eye(cont.C.shape[0]) * 1e-4

    _, b_d = discretize_road(road, sample_time, method)
    return DiscreteAugmentedModel(
        A_bar=A_bar,
        B_bar=np.zeros((n + 1, 0)),
        C_bar=C_bar,
        Q=Q,
        R=np.asarray(measurement_noise, dtype=float),
        sample_time=sample_time,
        road_gain_discrete=b_d,
    )


def discretize_physical(cont: ContinuousModel, sample_time: float
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Discretize the physical states alone with the road held constant
    over each sample interval: returns (A_d, B_d) such that
    ``x(k+1) = A_d x(k) + B_d w(k)``."""
    if sample_time <= 0:
        raise InvalidParameterError("sample_time must be positive")
    n = cont.A.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = cont.A
    M[:n, n] = cont.road_input
    Phi = expm(M * sample_time)
    return Phi[:n, :n], Phi[:n, n]


def scale_profile_estimate(values: np.ndarray, speed: float,
                           nominal_speed: float) -> np.ndarray:
    """Rescale road-profile values between travel speeds.

    The road disturbance intensity grows with the square root of speed, so
    an estimate obtained at ``speed`` maps to ``nominal_speed`` units (and
    back) through sqrt(speed / nominal_speed).
    """
    if speed <= 0 or nominal_speed <= 0:
        raise InvalidParameterError("speeds must be strictly positive")
    return np.asarray(values, dtype=float) * math.sqrt(speed / nominal_speed)
