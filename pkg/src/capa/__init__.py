"""Probabilistic component analysis.

PCA, LDA, LPP and SFA as maximum-likelihood solutions of one latent
variable model with different Markov random field priors, fitted either in
closed form or by EM.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .core import (CapaError, ConfigurationError, ConvergenceError, DataMatrix, DimensionError,
                   Kind, LatentMoments, ModelParams, NumericError, SingularityError, Solver,
                   center, center_with, project, projection_matrix)
from .em import EmOptions, EmTrace, e_step, em_fit, mean_field_means, mean_field_variance
from .io import load_model, save_model
from .ml import ml_fit, simultaneous_diagonalize
from .priors import (Neighbourhood, NeighbourhoodSpec, PriorOperators, build_prior_operators,
                     knn_graph, lambda_schedule)
from .sfa import ChainMoments, chain_smooth, sfa_em_fit, sfa_ml_fit
from .synthetic import (dense_gaussian_oracle, make_gaussian_clusters, make_slow_signals,
                        make_swiss_roll, subspace_angles)

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND", "CapaError", "ConfigurationError", "ConvergenceError", "DataMatrix",
    "DimensionError", "Kind", "LatentMoments", "ModelParams", "NumericError",
    "SingularityError", "Solver", "center", "center_with", "project", "projection_matrix",
    "EmOptions", "EmTrace", "e_step", "em_fit", "mean_field_means", "mean_field_variance",
    "load_model", "save_model", "ml_fit", "simultaneous_diagonalize", "Neighbourhood",
    "NeighbourhoodSpec", "PriorOperators", "build_prior_operators", "knn_graph",
    "lambda_schedule", "ChainMoments", "chain_smooth", "sfa_em_fit", "sfa_ml_fit",
    "dense_gaussian_oracle", "make_gaussian_clusters", "make_slow_signals", "make_swiss_roll",
    "subspace_angles",
]
