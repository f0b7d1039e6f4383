"""Collaborative road-profile estimation.

Heterogeneous simulated vehicles estimate the road elevation with
augmented Kalman filters, upload smoothed estimates to a simulated cloud,
and download the cloud's Gaussian-process fit as an extra
pseudo-measurement, iteratively sharpening the estimate from vehicle to
vehicle.
"""

__version__ = "0.1.0"

from .cloud import CloudDataset, CloudState, Contribution, download, upload
from .errors import (ConfigError, CrowdRoadError, InvalidParameterError,
                     NumericalError)
from .evaluation import (RunMetrics, build_observability_stack, mmse_oracle,
                         rmse, run_baselines)
from .gp import GPHyperParams, GPModel, fit, kernel, posterior_mean_slope, predict
from .kalman import (EstimateTrace, FilterStep, PseudoMeasurementChannel,
                     fixed_lag_smooth, kf_run, rts_smooth)
from .road import (RoadProfile, SensingConfig, corrupt_measurements,
                   corrupt_positions, generate_profile)
from .simulation import (CollaborativeResult, Scenario, SeedBundle,
                         run_collaborative, table1_fleet, table1_scenario,
                         table2_fleet)
from .vehicle import (ContinuousModel, DiscreteAugmentedModel,
                      QuarterCarParams, RoadModelParams,
                      augment_and_discretize, build_continuous_model,
                      discretize_road, scale_profile_estimate)
