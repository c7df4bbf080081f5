"""
Online Quantile Library

Streaming estimation of conditional quantile functions with additive
nonparametric models: projected functional gradient descent over a growing
orthonormal sieve, a random-coordinate ensemble, checkpointing and a
simulation lab for convergence-rate experiments.
"""

__version__ = "1.0.0"
__author__ = "Online Quantile Team"

from .basis import BasisFamily, BasisSpec, eval_basis_vector, eval_univariate, gram_deviation
from .projection import ProjectionResult, l1_project, l1_project_oracle
from .learner import (
    CoefficientState,
    EstimatorConfig,
    MiniBatch,
    Mode,
    OnlineQuantileEstimator,
    Sample,
    pinball_loss,
    predict,
    update_batch,
    update_single,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .ensemble import EnsembleConfig, EnsembleEstimator, MaskScope, SubsetRule, ensemble_predict, update_masked
from .simlab import NoiseLaw, TrueModel, EvaluationReport, exact_l2_error, make_sobolev_truth, rate_slope, run_experiment

__all__ = [
    "BasisFamily",
    "BasisSpec",
    "eval_basis_vector",
    "eval_univariate",
    "gram_deviation",
    "ProjectionResult",
    "l1_project",
    "l1_project_oracle",
    "CoefficientState",
    "EstimatorConfig",
    "MiniBatch",
    "Mode",
    "OnlineQuantileEstimator",
    "Sample",
    "pinball_loss",
    "predict",
    "update_batch",
    "update_single",
    "load_checkpoint",
    "save_checkpoint",
    "EnsembleConfig",
    "EnsembleEstimator",
    "MaskScope",
    "SubsetRule",
    "ensemble_predict",
    "update_masked",
    "NoiseLaw",
    "TrueModel",
    "EvaluationReport",
    "exact_l2_error",
    "make_sobolev_truth",
    "rate_slope",
    "run_experiment",
]
