"""Entropic-regularized synthetic coupling for counterfactual imputation and bias-aware intervals."""

from .coupling import (
    Coupling,
    Marginals,
    QuadraticSpec,
    entropy,
    entropy_chi2_ratio,
    independence_coupling,
    jensen_upper_bound,
    kl_divergence,
    ksc_gradient,
    ksc_objective,
)
from .errors import (
    DegenerateError,
    DivergenceUndefinedError,
    EmptySelectionError,
    IdentityViolationError,
    InvalidInputError,
    KSCError,
    PropensityOverflowError,
    SolverError,
)
from .imputation import (
    ImputationResult,
    TransitionMatrix,
    effects_and_aggregate,
    impute,
    transition_from_coupling,
)
from .inference import (
    IntervalSet,
    OracleContext,
    RidgeFit,
    bias_radius,
    confidence_intervals,
    interval_length_bounds,
    krr_fit,
    normal_quantile,
    oracle_intervals,
    select_rho_cv,
    suggest_lambda,
    variance_radius,
)
from .kernels import GramTriple, KernelSpec, eval_kernel, gram_triple
from .propensity import LogisticModel, ate_weights, att_control_weights, fit_logistic, trim_by_overlap
from .sinkhorn import entropic_ot, sinkhorn, sinkhorn_log
from .solver import SolveConfig, SolveReport, fixed_point, h_inf_norm, solve, solve_ksc, steepest_descent_kl

__version__ = "0.1.0"
