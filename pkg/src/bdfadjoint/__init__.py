"""Variable-order, variable-stepsize BDF integration with discrete adjoints.

The forward solver records every quantity needed to differentiate the
computation exactly: nodes, stepsizes, orders, states and Newton effort.
The adjoint sweep then runs the recorded recursion backwards, producing
multipliers whose step-function interpolant approximates the continuous
adjoint in a weak (dual, Riemann--Stieltjes) sense.
"""

from .adjoint import (DiscreteAdjoints, WeakAdjoint, adjoint_sweep,
                      assemble_weak_adjoint, gradient_wrt_initial, rs_pair)
from .analysis import (ConvergenceTable, KktResidualReport, dual_norm_bound,
                       fit_order, pointwise_error, verify_kkt)
from .bdf import (BdfCoefficients, DenseOutput, IntegrationTape, NewtonResult,
                  SolverError, TimeGrid, compute_coefficients, dense_eval,
                  integrate_adaptive, integrate_nonadaptive, newton_bdf_step,
                  replay_integration, tape_residuals)
from .problems import (AnalyticReference, OdeProblem, catenary_problem,
                       get_problem, linear_test_problem)
from .serialize import (load_adjoint_results, load_tape, save_adjoint_results,
                        save_kkt_report, save_tape, write_adjoint_csv,
                        write_convergence_csv)

__version__ = "0.1.0"

__all__ = [
    "AnalyticReference",
    "BdfCoefficients",
    "ConvergenceTable",
    "DenseOutput",
    "DiscreteAdjoints",
    "IntegrationTape",
    "KktResidualReport",
    "NewtonResult",
    "OdeProblem",
    "SolverError",
    "TimeGrid",
    "WeakAdjoint",
    "adjoint_sweep",
    "assemble_weak_adjoint",
    "catenary_problem",
    "compute_coefficients",
    "dense_eval",
    "dual_norm_bound",
    "fit_order",
    "get_problem",
    "gradient_wrt_initial",
    "integrate_adaptive",
    "integrate_nonadaptive",
    "linear_test_problem",
    "load_adjoint_results",
    "load_tape",
    "newton_bdf_step",
    "pointwise_error",
    "replay_integration",
    "rs_pair",
    "save_adjoint_results",
    "save_kkt_report",
    "save_tape",
    "tape_residuals",
    "verify_kkt",
    "write_adjoint_csv",
    "write_convergence_csv",
]
