"""Sublinear expectations, the G-heat equation, and LLN/CLT experiments."""

from .errors import BudgetExceeded, CFLViolation, NumericalError, SupportCapExceeded, ValidationError
from .experiments import (
    ExperimentConfig,
    ExperimentReport,
    fit_rate,
    lipschitz_envelope,
    run_clt,
    run_lln,
    uniform_approx_check,
)
from .gheat import (
    GridSpec,
    SolutionSurface,
    VolatilityBand,
    evaluate,
    g_function,
    gaussian_expect,
    gnormal_expect,
    solve_gheat,
    step_explicit,
    terminal_value_function,
)
from .nested_dp import DPQuery, DPResult, lln_second_moment, nested_expect, strategy_sup_oracle
from .sublinear import (
    DiscreteDistribution,
    MomentCertificate,
    ScenarioFamily,
    TestFunction,
    catalog,
    certify_band,
    constant,
    linear_expect,
    make_symmetric_two_point_family,
    p_norm,
    piecewise_linear,
    sublinear_expect,
)

__version__ = "0.1.0"
