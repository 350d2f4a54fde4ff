"""Deterministic and chance-constrained optimal power flow for lossless,
voltage-uniform grids, with synchronization (angle) limits treated as
first-class constraints alongside thermal ones."""

from .case_io import (
    ChanceSpec,
    SolutionReport,
    import_matpower,
    parse_case,
    read_report,
    serialize_case,
    write_report,
)
from .cc_opf import (
    CcSolution,
    ConicConstraint,
    analytic_violation_prob,
    build_conic_constraints,
    conic_lhs,
    eta,
    solve_cc_opf,
)
from .det_opf import (
    BarrierConfig,
    BarrierResult,
    LinearOpfResult,
    ScopfResult,
    barrier_config_from_dc,
    generation_cost,
    solve_barrier_opf,
    solve_dc_opf,
    solve_scopf,
)
from .errors import (
    BarrierDivergenceError,
    DimensionMismatchError,
    DisconnectedGraphError,
    DomainError,
    InfeasibleError,
    IterLimitError,
    NoConvergenceError,
    NonPositiveSusceptanceError,
    NumericalBreakdownError,
    ParseError,
    SyncOpfError,
    SyncRecoveryFailedError,
    UnbalancedInjectionsError,
    ValidationError,
    ZeroVarianceError,
)
from .ld_risk import (
    InstantonResult,
    e_dc_closed_form,
    ld_condition_check,
    nonlinear_instanton,
)
from .mc import McReport, certify, run_mc
from .network import Bus, Dispatch, Generator, Line, Network, injection_vector
from .powerflow import FlowState, energy_function_solve, psi, solve_pf
from .qp import QpSolution, QuadraticProgram, solve_qp

__version__ = "0.1.0"

__all__ = [
    "Bus",
    "Generator",
    "Line",
    "Network",
    "Dispatch",
    "injection_vector",
    "ChanceSpec",
    "SolutionReport",
    "parse_case",
    "serialize_case",
    "write_report",
    "read_report",
    "import_matpower",
    "FlowState",
    "psi",
    "solve_pf",
    "energy_function_solve",
    "QuadraticProgram",
    "QpSolution",
    "solve_qp",
    "LinearOpfResult",
    "ScopfResult",
    "BarrierConfig",
    "BarrierResult",
    "generation_cost",
    "solve_dc_opf",
    "solve_scopf",
    "barrier_config_from_dc",
    "solve_barrier_opf",
    "ConicConstraint",
    "CcSolution",
    "eta",
    "conic_lhs",
    "analytic_violation_prob",
    "build_conic_constraints",
    "solve_cc_opf",
    "InstantonResult",
    "e_dc_closed_form",
    "ld_condition_check",
    "nonlinear_instanton",
    "McReport",
    "run_mc",
    "certify",
    "SyncOpfError",
    "ParseError",
    "ValidationError",
    "DisconnectedGraphError",
    "NonPositiveSusceptanceError",
    "DimensionMismatchError",
    "UnbalancedInjectionsError",
    "DomainError",
    "InfeasibleError",
    "SyncRecoveryFailedError",
    "IterLimitError",
    "NoConvergenceError",
    "BarrierDivergenceError",
    "NumericalBreakdownError",
    "ZeroVarianceError",
    "__version__",
]
