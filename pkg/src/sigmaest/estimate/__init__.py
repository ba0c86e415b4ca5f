"""Parameter estimation: direct likelihood maximization and EM."""
from .em import (
    EMFailure,
    EMStatistics,
    EMTrace,
    EStep,
    SingularStatistic,
    e_step,
    em_iterate,
    em_statistics,
    loglik_gradient_fisher,
    m_step_closed_form,
    q_function,
    q_gradient,
    smoothing_entropy,
)
from .optim import (
    LineSearchFailure,
    OptimizerConfig,
    OptimResult,
    finite_difference_gradient,
    maximize,
    maximize_likelihood,
    objective_with_prior,
    write_trace_csv,
)
from .sensitivity import chol_derivative, log_likelihood, loglik_gradient_sensitivity, resolve_rule

__all__ = [
    "EMFailure",
    "EMStatistics",
    "EMTrace",
    "EStep",
    "LineSearchFailure",
    "OptimResult",
    "OptimizerConfig",
    "SingularStatistic",
    "chol_derivative",
    "e_step",
    "em_iterate",
    "em_statistics",
    "finite_difference_gradient",
    "log_likelihood",
    "loglik_gradient_fisher",
    "loglik_gradient_sensitivity",
    "m_step_closed_form",
    "maximize",
    "maximize_likelihood",
    "objective_with_prior",
    "q_function",
    "q_gradient",
    "resolve_rule",
    "smoothing_entropy",
    "write_trace_csv",
]
