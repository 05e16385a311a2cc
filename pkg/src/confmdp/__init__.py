"""Tabular configurable MDPs: exact solvers, bi-level configuration and
budgeted configuration of time-varying kernels."""

from .bilevel import (
    KernelDataset,
    TransitionDataset,
    UpperMdp,
    UpperSolution,
    associate_kernel,
    estimate_lower_kernel,
    estimate_upper_kernel,
    evaluate_upper_policy,
    lower_solve_all,
    solve_bilevel,
    upper_value_iteration,
)
from .core import (
    KernelPerAction,
    LowerMdp,
    expected_return,
    policy_evaluation_closed,
    q_values,
    value_iteration,
)
from .errors import (
    CatalogMismatch,
    DimensionMismatch,
    MdpError,
    NegativeEntryError,
    NonConvergence,
    ParseError,
    RowSumError,
    SingularSystemError,
    SolverStall,
    UnvisitedPairError,
    ValidationError,
)
from .io import load_scenario, save_scenario
from .tvcmdp import (
    ConfigPlan,
    TvcScenario,
    jacobian,
    linearize,
    maximize_linear,
    optimize_configuration,
    solve_tvcmdp,
)

__version__ = "0.1.0"
