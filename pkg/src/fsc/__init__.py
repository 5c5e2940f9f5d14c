"""Fractionally-supervised classification with Gaussian and multivariate-t mixtures."""

__version__ = "0.1.0"

from .criteria import (
    ari,
    classification_criterion,
    evaluate_all,
    information_criterion,
    map_partition,
    scatter_criterion,
    scatter_decomposition,
)
from .em import FitConfig, FitResult, fit, kmeans_init, run_em
from .errors import (
    DegenerateComponent,
    DimensionError,
    DomainError,
    FitFailed,
    FSCError,
    NoBracket,
    NoConvergence,
    NotPositiveDefinite,
    TooFewPoints,
    Unsupported,
)
from .model import DataSet, MixtureModel, Responsibilities, WeightConfig, weighted_observed_loglik
from .selection import WeightGrid, select_model_then_weight, select_num_groups, weight_grid_search
from .simulation import Scenario, generate, label_split, run_experiment
from .structures import IMPLEMENTED, CovarianceStructure, free_param_count, total_param_count

__all__ = [name for name in dir() if not name.startswith("_")]
