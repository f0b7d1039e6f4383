"""Cloud side of the collaborative loop: aggregate uploaded road
estimates, refit the regression after every contribution, and hand the
current fit back out as a pseudo-measurement channel.

All targets are stored in nominal-speed units: uploads are scaled by
sqrt(V0/V) on the way in, downloads by sqrt(V/V0) on the way out (and the
variance by V/V0, since the mean scales by the square root).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import gp
from .errors import InvalidParameterError
from .kalman import PseudoMeasurementChannel

CLOUDSTATE_VERSION = "cloudstate/1"


@dataclass(frozen=True)
class Contribution:
    """One vehicle's upload: GPS positions with smoothed road estimates."""

    vehicle_id: int
    positions: np.ndarray  # s_hat, m
    road_estimates: np.ndarray  # w_hat(k | k+L), m, in the vehicle's speed units
    speed: float  # m/s
    timestamp: int = 0  # logical upload sequence number

    def __post_init__(self):
        s = np.asarray(self.positions, dtype=float).ravel()
        w = np.asarray(self.road_estimates, dtype=float).ravel()
        if s.size != w.size:
            raise InvalidParameterError(
                f"vehicle {self.vehicle_id}: positions and estimates differ in length")
        if s.size == 0:
            raise InvalidParameterError(f"vehicle {self.vehicle_id}: empty contribution")
        if self.speed <= 0:
            raise InvalidParameterError(f"vehicle {self.vehicle_id}: speed must be positive")
        object.__setattr__(self, "positions", s)
        object.__setattr__(self, "road_estimates", w)


@dataclass(frozen=True)
class CloudDataset:
    """Ordered per-vehicle contributions for one road segment."""

    segment_id: str = "segment-0"
    contributions: tuple[Contribution, ...] = ()

    def __post_init__(self):
        seen = set()
        for c in self.contributions:
            if c.vehicle_id in seen:
                raise InvalidParameterError(f"duplicate vehicle id {c.vehicle_id}")
            seen.add(c.vehicle_id)

    def __len__(self) -> int:
        return len(self.contributions)


@dataclass(frozen=True)
class CloudState:
    """Aggregated dataset plus the regression currently served to vehicles."""

    dataset: CloudDataset
    mode: str = gp.NOISY_INPUT
    nominal_speed: float = 1.0
    model: gp.GPModel | None = None
    fit_seed: int = 0
    restarts_first: int = 2
    restarts_refit: int = 0
    nigp_iterations: int = 2

    @classmethod
    def empty(cls, mode: str = gp.NOISY_INPUT, nominal_speed: float = 1.0,
              segment_id: str = "segment-0", fit_seed: int = 0,
              restarts_first: int = 2, restarts_refit: int = 0,
              nigp_iterations: int = 2) -> "CloudState":
        return cls(dataset=CloudDataset(segment_id=segment_id), mode=mode,
                   nominal_speed=nominal_speed, fit_seed=fit_seed,
                   restarts_first=restarts_first, restarts_refit=restarts_refit,
                   nigp_iterations=nigp_iterations)

    def training_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Concatenated inputs and speed-normalized targets, upload order."""
        if len(self.dataset) == 0:
            return np.empty(0), np.empty(0)
        s = np.concatenate([c.positions for c in self.dataset.contributions])
        w = np.concatenate([
            c.road_estimates * math.sqrt(self.nominal_speed / c.speed)
            for c in self.dataset.contributions
        ])
        return s, w

    def to_json_dict(self) -> dict:
        return {
            "version": CLOUDSTATE_VERSION,
            "segment_id": self.dataset.segment_id,
            "mode": self.mode,
            "nominal_speed": self.nominal_speed,
            "fit_seed": self.fit_seed,
            "restarts_first": self.restarts_first,
            "restarts_refit": self.restarts_refit,
            "nigp_iterations": self.nigp_iterations,
            "contributions": [
                {
                    "vehicle_id": c.vehicle_id,
                    "positions": c.positions.tolist(),
                    "road_estimates": c.road_estimates.tolist(),
                    "speed": c.speed,
                    "timestamp": c.timestamp,
                }
                for c in self.dataset.contributions
            ],
            "model": None if self.model is None else self.model.to_json_dict(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "CloudState":
        if doc.get("version") != CLOUDSTATE_VERSION:
            raise InvalidParameterError(
                f"unsupported cloud state document {doc.get('version')!r}")
        contributions = tuple(
            Contribution(vehicle_id=c["vehicle_id"],
                         positions=np.asarray(c["positions"], dtype=float),
                         road_estimates=np.asarray(c["road_estimates"], dtype=float),
                         speed=c["speed"], timestamp=c["timestamp"])
            for c in doc["contributions"]
        )
        model = None if doc["model"] is None else gp.GPModel.from_json_dict(doc["model"])
        return cls(dataset=CloudDataset(segment_id=doc["segment_id"],
                                        contributions=contributions),
                   mode=doc["mode"], nominal_speed=doc["nominal_speed"],
                   model=model, fit_seed=doc["fit_seed"],
                   restarts_first=doc["restarts_first"],
                   restarts_refit=doc["restarts_refit"],
                   nigp_iterations=doc["nigp_iterations"])

    @classmethod
    def from_json(cls, path) -> "CloudState":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def upload(state: CloudState, contribution: Contribution,
           segment_id: str | None = None) -> CloudState:
    """Append a contribution and refit the regression on the full dataset.

    The refit is warm-started at the previous hyperparameters when a model
    exists; the optimizer stream is derived from (fit_seed, contribution
    count) so identical upload sequences produce identical states.
    """
    if segment_id is not None and segment_id != state.dataset.segment_id:
        raise InvalidParameterError(
            f"segment mismatch: {segment_id!r} vs {state.dataset.segment_id!r}")
    dataset = CloudDataset(
        segment_id=state.dataset.segment_id,
        contributions=state.dataset.contributions + (contribution,))
    grown = replace(state, dataset=dataset)

    s, w = grown.training_arrays()
    warm = state.model.hyperparams if state.model is not None else None
    restarts = state.restarts_first if state.model is None else state.restarts_refit
    seed = np.random.SeedSequence([state.fit_seed, len(dataset)])
    model = gp.fit(s, w, mode=state.mode, init=warm, restarts=restarts,
                   seed=seed, nigp_iterations=state.nigp_iterations)
    return replace(grown, model=model)


def download(state: CloudState, speed: float,
             query_noise_std: float | None = None
             ) -> PseudoMeasurementChannel | None:
    """Pseudo-measurement channel at the requesting vehicle's speed, or
    None before the first contribution (that vehicle runs a plain filter).

    The channel's noise variance is the predictive variance at a noisy
    query position: the posterior variance plus (rms mean slope * position
    noise)^2, where the position noise is ``query_noise_std`` -- the
    requesting vehicle's known GPS noise. The slope enters as a constant
    rms over the training span rather than pointwise, and the known GPS
    spec is used rather than the fitted input-noise scale: both choices
    keep the channel weighting from re-shaping upload errors in a way that
    feeds back into the next fit.
    """
    if state.model is None:
        return None
    if speed <= 0:
        raise InvalidParameterError("speed must be strictly positive")
    model = state.model
    pos_noise = query_noise_std or 0.0
    slopes = model.posterior_mean_slope(model.train_inputs)
    query_var = float(np.mean(slopes ** 2)) * pos_noise ** 2
    mean_scale = math.sqrt(speed / state.nominal_speed)
    var_scale = speed / state.nominal_speed

    cache: dict[float, tuple[float, float]] = {}

    def _predict(s: float) -> tuple[float, float]:
        hit = cache.get(s)
        if hit is None:
            mean, var = model.predict(s)
            hit = cache[s] = (float(mean[0]), float(var[0]) + query_var)
        return hit

    def value(s: float, k: int) -> float:
        return mean_scale * _predict(s)[0]

    def variance(s: float, k: int) -> float:
        return var_scale * _predict(s)[1]

    return PseudoMeasurementChannel(value=value, variance=variance)
