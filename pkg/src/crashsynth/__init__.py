"""Synthetic rear-end crash dataset generation.

Fits pre-crash lead kinematics to a piecewise-linear model, combines and
reweights biased crash datasets, simulates follower/lead pairs under a
combined car-following and collision-avoidance driver model, reweights the
simulated scenarios to marginal targets, and validates the result against
reference distributions.
"""

from .core import (
    CrashEvent,
    ScenarioSpec,
    SchemaError,
    SpeedProfile,
    WeightedDataset,
    derive_seed,
    load_events,
    load_mass_records,
)
from .distmodels import (
    REFERENCE_STATE_PROPORTIONS,
    STATE_LABELS,
    categorize,
    fit_gengamma,
    fit_mixture,
    fit_truncnormal,
    sample_mixture,
)
from .driver import BrakeParams, IdmParams, combined_accel, idm_accel, looming
from .impact import collinear_impact, restitution, transform_delta_v
from .pipeline import Pipeline, PipelineConfig, load_config
from .profilefit import FitResult, evaluate_profile, fit_piecewise
from .simengine import SimConfig, SimLog, match_and_simulate, run_sim
from .validation import build_report
from .weighting import ipf_reweight, knn_weight, select_k, weighted_ks

__version__ = "0.1.0"

__all__ = [
    "BrakeParams",
    "CrashEvent",
    "FitResult",
    "IdmParams",
    "Pipeline",
    "PipelineConfig",
    "REFERENCE_STATE_PROPORTIONS",
    "STATE_LABELS",
    "ScenarioSpec",
    "SchemaError",
    "SimConfig",
    "SimLog",
    "SpeedProfile",
    "WeightedDataset",
    "build_report",
    "categorize",
    "collinear_impact",
    "combined_accel",
    "derive_seed",
    "evaluate_profile",
    "fit_gengamma",
    "fit_mixture",
    "fit_piecewise",
    "fit_truncnormal",
    "idm_accel",
    "ipf_reweight",
    "knn_weight",
    "load_config",
    "load_events",
    "load_mass_records",
    "looming",
    "match_and_simulate",
    "restitution",
    "run_sim",
    "sample_mixture",
    "select_k",
    "transform_delta_v",
    "weighted_ks",
]
