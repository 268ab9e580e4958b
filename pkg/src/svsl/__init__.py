"""Curriculum-driven mixture-of-experts contextual policy search."""

from .distributions import Categorical, Gaussian, LinCondGaussian
from .envs import BimodalToy, Environment, PlanarReacher, PlanarReacherConfig, QuadraticToy, make_env
from .mixture import MoEPolicy, VariationalSnapshot
from .objectives import NadarayaWatsonBaseline, objective_estimates, staleness_kl_estimate
from .solvers import (
    CtxQuadModel,
    QuadModel,
    TrustRegionConfig,
    fit_contextual_quadratic,
    fit_quadratic,
    more_gauss_update,
    more_lincond_update,
    reps_categorical_update,
)
from .training import HyperParams, ReplayBuffer, Rollout, TrainResult, run

__version__ = "0.1.0"

__all__ = [
    "BimodalToy",
    "Categorical",
    "CtxQuadModel",
    "Environment",
    "Gaussian",
    "HyperParams",
    "LinCondGaussian",
    "MoEPolicy",
    "NadarayaWatsonBaseline",
    "PlanarReacher",
    "PlanarReacherConfig",
    "QuadModel",
    "QuadraticToy",
    "ReplayBuffer",
    "Rollout",
    "TrainResult",
    "TrustRegionConfig",
    "VariationalSnapshot",
    "fit_contextual_quadratic",
    "fit_quadratic",
    "make_env",
    "more_gauss_update",
    "more_lincond_update",
    "objective_estimates",
    "reps_categorical_update",
    "run",
    "staleness_kl_estimate",
]
