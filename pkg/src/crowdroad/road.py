"""Ground-truth road synthesis and the simulated sensing environment:
sensor noise injected at a target signal-to-noise ratio and GPS position
noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .vehicle import RoadModelParams, discretize_road


@dataclass(frozen=True)
class RoadProfile:
    """Sampled road elevation over longitudinal distance.

    Positions are uniformly spaced at speed * sample_time; elevations are
    the road heights at those positions. Generator metadata is retained so
    a profile can be reproduced exactly.
    """

    positions: np.ndarray  # m, strictly increasing, uniform spacing
    elevations: np.ndarray  # m
    road: RoadModelParams
    speed: float  # m/s
    seed: int | None = None

    def __post_init__(self):
        s = np.asarray(self.positions, dtype=float)
        w = np.asarray(self.elevations, dtype=float)
        if s.size < 2:
            raise InvalidParameterError("profile needs at least 2 points")
        if s.size != w.size:
            raise InvalidParameterError("positions and elevations differ in length")
        spacing = np.diff(s)
        if spacing.min() <= 0:
            raise InvalidParameterError("positions must be strictly increasing")
        if np.max(np.abs(spacing - spacing[0])) > 1e-12 * max(1.0, abs(spacing[0])):
            raise InvalidParameterError("positions must be uniformly spaced")
        object.__setattr__(self, "positions", s)
        object.__setattr__(self, "elevations", w)

    @property
    def spacing(self) -> float:
        return float(self.positions[1] - self.positions[0])

    def to_csv(self, path) -> None:
        header = (f"# road profile: seed={self.seed} pole={self.road.pole!r} "
                  f"gain={self.road.gain!r} speed_m_s={self.speed!r}\n"
                  "s_m,w_m")
        data = np.column_stack([self.positions, self.elevations])
        np.savetxt(path, data, delimiter=",", comments="", header=header,
                   fmt="%.17g")

    @classmethod
    def from_csv(cls, path, road: RoadModelParams, speed: float,
                 seed: int | None = None) -> "RoadProfile":
        # one comment line plus the column-name row
        data = np.loadtxt(path, delimiter=",", skiprows=2)
        return cls(positions=data[:, 0], elevations=data[:, 1],
                   road=road, speed=speed, seed=seed)


@dataclass(frozen=True)
class SensingConfig:
    """Per-vehicle sensing environment.

    The SNR band is a unitless variance ratio (signal variance over noise
    variance); each vehicle-channel pair draws its target uniformly from
    the band.
    """

    snr_low: float
    snr_high: float
    gps_noise_std: float  # m

    def __post_init__(self):
        if not (0 < self.snr_low <= self.snr_high):
            raise InvalidParameterError(
                f"need 0 < snr_low <= snr_high, got ({self.snr_low}, {self.snr_high})")
        if self.gps_noise_std < 0:
            raise InvalidParameterError("gps_noise_std must be non-negative")


@dataclass(frozen=True)
class CorruptedMeasurements:
    """Noisy sensor outputs plus the noise statistics actually applied."""

    noisy: np.ndarray  # (T, r)
    noise_variance: np.ndarray  # (r,), the variances fed to the filter's R
    snr_target: np.ndarray  # (r,), drawn targets
    snr_empirical: np.ndarray  # (r,), realized signal/noise variance ratio
    bias: np.ndarray = None  # (r,), constant per-channel sensor offset

    def __post_init__(self):
        if self.bias is None:
            object.__setattr__(self, "bias",
                               np.zeros(self.noise_variance.shape))


def generate_profile(road: RoadModelParams, speed: float, sample_time: float,
                     n_steps: int, seed, method: str = "zoh",
                     initial_elevation: float = 0.0) -> RoadProfile:
    """Draw one road realization from the discretized first-order model.

    w(k+1) = a_d w(k) + b_d e(k) with e ~ N(0,1) from the seeded generator;
    positions are k * speed * sample_time. Deterministic per seed.
    """
    if n_steps < 2:
        raise InvalidParameterError("n_steps must be at least 2")
    if speed <= 0:
        raise InvalidParameterError("speed must be strictly positive")
    a_d, b_d = discretize_road(road, sample_time, method)
    rng = np.random.default_rng(seed)
    shocks = rng.standard_normal(n_steps - 1)
    w = np.empty(n_steps)
    w[0] = initial_elevation
    for k in range(n_steps - 1):
        w[k + 1] = a_d * w[k] + b_d * shocks[k]
    positions = np.arange(n_steps) * (speed * sample_time)
    seed_int = seed if isinstance(seed, int) else None
    return RoadProfile(positions=positions, elevations=w, road=road,
                       speed=speed, seed=seed_int)


def corrupt_measurements(clean_outputs: np.ndarray, cfg: SensingConfig,
                         seed, bias_fraction: float = 0.0
                         ) -> CorruptedMeasurements:
    """Add white Gaussian noise per channel at an SNR drawn from the band.

    Noise variance is Var(channel) / SNR_target; the drawn variances are
    returned so a calibrated filter can use them as R. With a nonzero
    ``bias_fraction``, each channel additionally receives a constant
    offset drawn once per call with std = bias_fraction * channel std --
    an uncalibrated sensor bias the filter's R knows nothing about.
    """
    clean = np.atleast_2d(np.asarray(clean_outputs, dtype=float))
    if clean.ndim != 2:
        raise InvalidParameterError("clean_outputs must be a (T, r) array")
    if bias_fraction < 0:
        raise InvalidParameterError("bias_fraction must be non-negative")
    T, r = clean.shape
    signal_var = clean.var(axis=0)
    if np.any(signal_var == 0):
        dead = int(np.flatnonzero(signal_var == 0)[0])
        raise InvalidParameterError(
            f"channel {dead} has zero variance; SNR is undefined")

    rng = np.random.default_rng(seed)
    snr_target = rng.uniform(cfg.snr_low, cfg.snr_high, size=r)
    noise_var = signal_var / snr_target
    noise = rng.standard_normal((T, r)) * np.sqrt(noise_var)
    bias = (rng.standard_normal(r) * bias_fraction * np.sqrt(signal_var)
            if bias_fraction > 0 else np.zeros(r))
    realized_noise_var = noise.var(axis=0)
    snr_empirical = signal_var / realized_noise_var
    return CorruptedMeasurements(noisy=clean + noise + bias,
                                 noise_variance=noise_var,
                                 snr_target=snr_target,
                                 snr_empirical=snr_empirical,
                                 bias=bias)


def corrupt_positions(true_positions: np.ndarray, gps_noise_std: float,
                      seed) -> np.ndarray:
    """GPS-degraded positions: additive i.i.d. N(0, sigma^2) noise.

    No sorting is applied; with large noise the result may be non-monotone,
    exactly as a real receiver would report.
    """
    if gps_noise_std < 0:
        raise InvalidParameterError("gps_noise_std must be non-negative")
    s = np.asarray(true_positions, dtype=float)
    if gps_noise_std == 0:
        return s.copy()
    rng = np.random.default_rng(seed)
    return s + rng.standard_normal(s.shape) * gps_noise_std
