"""Boundary-crossing random walks: simulation, expansions, and inference.

The package simulates walks (X_n, W_n) stopped when the scalar component
first exceeds a level, estimates ladder-variable moments, evaluates
second-order distributional expansions for the stopped covariates and for
studentized stopped means, and builds the matching corrected confidence
intervals. A Monte Carlo harness reproduces the reference coverage study
and validates the identities and densities the expansions rest on.
"""

from .errors import (
    DegenerateVariance,
    DomainError,
    IncrementsNotRetained,
    InvalidConfig,
    InvalidCount,
    InvalidStatistic,
    MaxStepsExceeded,
    MissingLadderMoments,
    MomentsUnavailable,
    NoLadderEpoch,
    NonPositiveDrift,
    NonPositiveNuHat,
    OutOfNeighborhood,
    SingularSigma,
    StopwalkError,
    TooFewObservations,
    WrongDimension,
)
from .expansion import (
    ExpansionContext,
    SigmaStarPartition,
    SmoothStatistic,
    box_probability,
    density_mass_leading,
    density_qhat,
    eval_H,
    expected_renewal_boxes,
    fa_cdf,
    fa_cdf_grid,
    make_context,
    marginal_cdf_w,
    marginal_cdf_w_grid,
    q_point,
    renewal_density_rhat,
    t0_cdf,
    t_statistic_smooth,
    xi_statistic,
)
from .harness import (
    CdfReport,
    CoverageReport,
    ExperimentConfig,
    IdentitySuite,
    RenewalReport,
    SignReport,
    chunk_rng,
    config_from_dict,
    report_from_dict,
    run_cdf_compare,
    run_coverage,
    run_identity_checks,
    run_renewal_check,
    run_sign_check,
    serialize_report,
    table1_config,
    write_text_atomic,
)
from .inference import (
    ConfidenceInterval,
    PluginEstimates,
    batch_intervals,
    ci_anscombe,
    ci_corrected,
    plugin_estimates,
    t_statistics,
)
from .ladder import (
    IdentityReport,
    LadderMoments,
    analytic_ladder_moments,
    check_identities,
    ladder_moments,
    rho_eval,
)
from .models import (
    IncrementModel,
    MomentSet,
    analytic_moments,
    bernoulli_step,
    bivariate_normal,
    composite,
    degenerate,
    gamma_shifted,
    gaussian_general,
    lifted_t_sigma_star,
    model_from_spec,
    positive_exponential,
    sample_moments,
)
from .walk import (
    LadderEpochs,
    LadderSample,
    StoppedWalk,
    batch_stopped_sums,
    ladder_epochs,
    run_to_boundary,
    sample_ladder_variables,
)

__version__ = "0.1.0"

__all__ = [
    "StopwalkError", "NonPositiveDrift", "SingularSigma", "MomentsUnavailable",
    "MaxStepsExceeded", "NoLadderEpoch", "InvalidCount", "MissingLadderMoments",
    "WrongDimension", "DomainError", "OutOfNeighborhood", "InvalidStatistic",
    "DegenerateVariance", "TooFewObservations", "IncrementsNotRetained",
    "NonPositiveNuHat", "InvalidConfig",
    "IncrementModel", "MomentSet", "analytic_moments", "sample_moments",
    "bivariate_normal", "gaussian_general", "positive_exponential",
    "gamma_shifted", "bernoulli_step", "degenerate", "composite",
    "model_from_spec", "lifted_t_sigma_star",
    "StoppedWalk", "LadderEpochs", "LadderSample", "run_to_boundary",
    "batch_stopped_sums", "ladder_epochs", "sample_ladder_variables",
    "LadderMoments", "ladder_moments", "analytic_ladder_moments", "rho_eval",
    "IdentityReport", "check_identities",
    "ExpansionContext", "make_context", "q_point", "eval_H", "density_qhat",
    "renewal_density_rhat", "marginal_cdf_w", "marginal_cdf_w_grid",
    "SigmaStarPartition", "SmoothStatistic", "xi_statistic",
    "t_statistic_smooth", "fa_cdf", "fa_cdf_grid", "t0_cdf",
    "box_probability", "density_mass_leading", "expected_renewal_boxes",
    "ConfidenceInterval", "PluginEstimates", "t_statistics", "plugin_estimates",
    "ci_anscombe", "ci_corrected", "batch_intervals",
    "ExperimentConfig", "config_from_dict", "table1_config", "chunk_rng",
    "run_coverage", "run_cdf_compare", "run_identity_checks",
    "run_renewal_check", "run_sign_check", "CoverageReport", "CdfReport",
    "IdentitySuite", "RenewalReport", "SignReport", "serialize_report",
    "report_from_dict", "write_text_atomic",
]
