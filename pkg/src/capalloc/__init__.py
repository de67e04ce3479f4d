"""Capacity allocation analysis for linear autoregressive architectures."""

from . import architectures, capacity, covariance, features, fitting
from .architectures import LayerSpec, ModelManifold, dilated, pointwise, recurrent_diag
from .capacity import (
    CapacityReport,
    ConstraintBasis,
    Subspace,
    basis_from_columns,
    capacity_of,
    conditional_capacity,
    conditional_chain,
    constraint_basis,
    constraint_columns,
    covariance_eigen_capacity,
    effective_parameter_count,
    error_bound_analysis,
    marginal_contributions,
    rank_threshold,
    redundancy_check,
    spatial_cpi,
)
from .errors import (
    CapallocError,
    ConfigError,
    ConvergenceWarning,
    DegenerateJacobian,
    IncompatibleConfigs,
    InsufficientFits,
    InvalidPartition,
    NotPositiveSemiDefinite,
    RankDeficientFeatures,
    ShapeMismatch,
    SingularCovariance,
    StationarityViolated,
    UnstableAR,
)
from .covariance import (
    AutocovarianceSpec,
    CovarianceMatrix,
    ExactPredictor,
    build_covariance,
    exact_predictor,
)
from .features import FeatureMap, FeatureMoment, estimate_feature_moments, feature_capacity, input_space_capacity
from .fitting import FitConfig, FitResult, fit, loss_and_gradient

__version__ = "0.1.0"

__all__ = [
    "AutocovarianceSpec",
    "CapacityReport",
    "CapallocError",
    "ConfigError",
    "ConstraintBasis",
    "ConvergenceWarning",
    "CovarianceMatrix",
    "DegenerateJacobian",
    "ExactPredictor",
    "FeatureMap",
    "FeatureMoment",
    "FitConfig",
    "FitResult",
    "IncompatibleConfigs",
    "InsufficientFits",
    "InvalidPartition",
    "LayerSpec",
    "ModelManifold",
    "NotPositiveSemiDefinite",
    "RankDeficientFeatures",
    "ShapeMismatch",
    "SingularCovariance",
    "StationarityViolated",
    "Subspace",
    "UnstableAR",
    "architectures",
    "basis_from_columns",
    "build_covariance",
    "constraint_columns",
    "capacity",
    "capacity_of",
    "conditional_capacity",
    "conditional_chain",
    "constraint_basis",
    "covariance",
    "covariance_eigen_capacity",
    "dilated",
    "effective_parameter_count",
    "error_bound_analysis",
    "estimate_feature_moments",
    "exact_predictor",
    "feature_capacity",
    "features",
    "fit",
    "fitting",
    "input_space_capacity",
    "loss_and_gradient",
    "marginal_contributions",
    "pointwise",
    "rank_threshold",
    "recurrent_diag",
    "redundancy_check",
    "spatial_cpi",
]
