"""Mixtures of Gaussian-gated experts: maximum-likelihood and
L1-regularized fitting, BIC model selection, simulation and evaluation."""

from .model import (
    VARIANCE_FLOOR,
    DataSet,
    DegenerateComponentError,
    ExpertComponent,
    FitFailedError,
    GatingComponent,
    MoggeParams,
    NotPositiveDefiniteError,
    Responsibilities,
    UnsupportedConfigError,
    conditional_density,
    gaussian_logpdf,
    gating_probs,
    joint_loglik,
    penalized_loglik,
    posterior_responsibilities,
)
from .em import (
    FitOptions,
    FitResult,
    fit_em,
    init_params,
    m_step_experts,
    m_step_gating,
)
from .em_lasso import (
    PenaltyConfig,
    ca_update_expert_coeffs,
    ca_update_gating_means,
    fit_em_lasso,
    soft_threshold,
    update_expert_intercept_variance,
    update_gating_variances,
)
from .selection import (
    GridSpec,
    SelectionError,
    SelectionRow,
    SelectionTable,
    count_df,
    grid_search,
    modified_bic,
)
from .simulate import Scenario, default_scenario, replicate_seed, sample_dataset
from .metrics import (
    BlockScore,
    SparsityReport,
    adjusted_rand_index,
    bayes_labels,
    best_label_permutation,
    classification_rate,
    match_components,
    sensitivity_specificity,
)

__version__ = "0.1.0"

__all__ = [
    "VARIANCE_FLOOR",
    "DataSet",
    "GatingComponent",
    "ExpertComponent",
    "MoggeParams",
    "Responsibilities",
    "NotPositiveDefiniteError",
    "UnsupportedConfigError",
    "DegenerateComponentError",
    "FitFailedError",
    "gaussian_logpdf",
    "gating_probs",
    "conditional_density",
    "joint_loglik",
    "penalized_loglik",
    "posterior_responsibilities",
    "FitOptions",
    "FitResult",
    "init_params",
    "m_step_gating",
    "m_step_experts",
    "fit_em",
    "PenaltyConfig",
    "soft_threshold",
    "ca_update_gating_means",
    "update_gating_variances",
    "ca_update_expert_coeffs",
    "update_expert_intercept_variance",
    "fit_em_lasso",
    "GridSpec",
    "SelectionError",
    "SelectionRow",
    "SelectionTable",
    "count_df",
    "modified_bic",
    "grid_search",
    "Scenario",
    "default_scenario",
    "sample_dataset",
    "replicate_seed",
    "BlockScore",
    "SparsityReport",
    "bayes_labels",
    "best_label_permutation",
    "classification_rate",
    "adjusted_rand_index",
    "match_components",
    "sensitivity_specificity",
    "__version__",
]
