"""Verification and convergence analysis for BDF tapes and their adjoints.

`verify_kkt` certifies numerically that discretization and optimization
commute: the recorded states satisfy the block lower-triangular forward
system and the computed adjoints satisfy the transposed backward system, at
solver tolerance.  The remaining helpers measure errors against analytic
references and estimate observed convergence orders.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .adjoint import DiscreteAdjoints, WeakAdjoint
from .bdf import IntegrationTape

__all__ = [
    "KKT_ASSEMBLE_LIMIT",
    "KktResidualReport",
    "ConvergenceTable",
    "verify_kkt",
    "pointwise_error",
    "dual_norm_bound",
    "fit_order",
]

# above d*N = 20000 the block matrices are not materialized; residuals are
# accumulated step-wise instead (identical values)
KKT_ASSEMBLE_LIMIT = 20000


@dataclass(frozen=True)
class KktResidualReport:
    """Residuals of the discretized optimality system evaluated at (Y, lambda, l)."""

    nominal_residual: float
    adjoint_residual: float
    initial_residual: float
    nominal_threshold: float
    adjoint_threshold: float

    def __post_init__(self):
        for name in ("nominal_residual", "adjoint_residual", "initial_residual"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")

    @property
    def passed(self) -> bool:
        return (self.nominal_residual <= self.nominal_threshold
                and self.adjoint_residual <= self.adjoint_threshold)


def _band_matrix(tape):
    """The N x N lower-triangular band matrix A of step coefficients."""
    n = tape.n_steps
    a = np.zeros((n, n))
    for step in range(n):
        alphas = tape.coefficients[step].alphas
        for i in range(min(tape.grid.orders[step], step) + 1):
            a[step, step - i] = alphas[i]
    return a


def _nominal_residual_vec(problem, tape):
    """Per-step residual blocks of the forward system (start vector included)."""
    n = tape.n_steps
    d = tape.dimension
    out = np.empty((n, d))
    nodes = tape.grid.nodes
    h = tape.grid.stepsizes
    for step in range(n):
        k = tape.grid.orders[step]
        alphas = tape.coefficients[step].alphas
        acc = alphas[0] * tape.states[step + 1]
        for i in range(1, k + 1):
            acc = acc + alphas[i] * tape.states[step + 1 - i]
        out[step] = acc - h[step] * problem.rhs(nodes[step + 1], tape.states[step + 1])
    return out


def _adjoint_residual_vec(problem, tape, adjoints):
    """Row residuals of the transposed (backward) system plus the y_0 row."""
    n = tape.n_steps
    d = tape.dimension
    nodes = tape.grid.nodes
    h = tape.grid.stepsizes
    lam = adjoints.lambdas
    rows = np.zeros((n, d))
    for step in range(n):
        alphas = tape.coefficients[step].alphas
        for i in range(min(tape.grid.orders[step], step) + 1):
            rows[step - i] += alphas[i] * lam[step]
    for j in range(1, n + 1):
        fy = problem.jacobian(nodes[j], tape.states[j])
        rows[j - 1] -= h[j - 1] * (fy.T @ lam[j - 1])
    rows[n - 1] -= problem.criterion_gradient(tape.states[n])
    grad_row = adjoints.gradient.copy()
    for step in range(n):
        if tape.grid.orders[step] >= step + 1:
            grad_row += tape.coefficients[step].alphas[step + 1] * lam[step]
    return rows, grad_row


def verify_kkt(problem, tape: IntegrationTape, adjoints: DiscreteAdjoints) -> KktResidualReport:
    """Evaluate the assembled optimality-system residuals at the recorded data.

    nominal_residual: max-norm of (A (x) I) Y + start-vector - stepsize-scaled
    f-vector.  adjoint_residual: max-norm of the transposed system evaluated
    at (lambda, l), including the initial-state row.  The block matrices are
    materialized only when d*N <= KKT_ASSEMBLE_LIMIT; beyond that the same
    residuals are accumulated without forming A.
    """
    n = tape.n_steps
    d = tape.dimension
    if adjoints.lambdas.shape != (n, d):
        raise ValueError(
            f"adjoints have shape {adjoints.lambdas.shape}, tape expects {(n, d)}"
        )

    if d * n <= KKT_ASSEMBLE_LIMIT:
        a = _band_matrix(tape)
        eye = np.eye(d)
        big = np.kron(a, eye)
        y_flat = tape.states[1:].reshape(-1)
        start = np.zeros(n * d)
        f_vec = np.empty(n * d)
        nodes = tape.grid.nodes
        h = tape.grid.stepsizes
        for step in range(n):
            if tape.grid.orders[step] >= step + 1:
                start[step * d:(step + 1) * d] = (
                    tape.coefficients[step].alphas[step + 1] * tape.states[0]
                )
            f_vec[step * d:(step + 1) * d] = h[step] * problem.rhs(
                nodes[step + 1], tape.states[step + 1])
        nominal = float(np.max(np.abs(big @ y_flat + start - f_vec)))

        blocks = np.zeros((n * d, n * d))
        for j in range(1, n + 1):
            fy = problem.jacobian(nodes[j], tape.states[j])
            blocks[(j - 1) * d:j * d, (j - 1) * d:j * d] = h[j - 1] * fy.T
        rhs = np.zeros(n * d)
        rhs[(n - 1) * d:] = problem.criterion_gradient(tape.states[n])
        lam_flat = adjoints.lambdas.reshape(-1)
        adj_rows = (np.kron(a.T, eye) - blocks) @ lam_flat - rhs
        grad_row = adjoints.gradient.copy()
        for step in range(n):
            if tape.grid.orders[step] >= step + 1:
                grad_row += tape.coefficients[step].alphas[step + 1] * adjoints.lambdas[step]
        adjoint_res = float(max(np.max(np.abs(adj_rows)), np.max(np.abs(grad_row))))
    else:
        nominal = float(np.max(np.abs(_nominal_residual_vec(problem, tape))))
        rows, grad_row = _adjoint_residual_vec(problem, tape, adjoints)
        adjoint_res = float(max(np.max(np.abs(rows)), np.max(np.abs(grad_row))))

    lam_scale = float(np.max(np.abs(adjoints.lambdas))) if n else 0.0
    return KktResidualReport(
        nominal_residual=nominal,
        adjoint_residual=adjoint_res,
        initial_residual=float(np.max(np.abs(tape.states[0] - _initial_state(problem)))),
        nominal_threshold=10.0 * float(np.max(tape.newton_tolerances)),
        adjoint_threshold=1e-9 * (1.0 + lam_scale),
    )


def _initial_state(problem):
    return np.asarray(problem.initial_state, dtype=float)


def pointwise_error(weak_adjoint: WeakAdjoint, reference, t) -> float:
    """|| Lambda(t) - Lambda^h(t) ||_2 against the analytic weak adjoint."""
    exact = np.asarray(reference.weak_adjoint(t), dtype=float)
    return float(np.linalg.norm(exact - weak_adjoint.eval(t), 2))


def _uniform_main_stepsize(grid, max_ramp=6, rel=1e-9):
    """Main stepsize h of an equidistant grid, tolerating a short start ramp."""
    h_all = grid.stepsizes
    h = h_all[-1]
    uniform = np.abs(h_all - h) <= rel * h
    s = h_all.size
    while s > 0 and uniform[s - 1]:
        s -= 1
    if (s > max_ramp or h_all.size - s < max(2, s)
            or np.any(h_all[:s] > h * (1.0 + rel))):
        raise ValueError(
            "dual_norm_bound requires an equidistant grid "
            "(a short self-start ramp of smaller steps is tolerated)"
        )
    return float(h)


def dual_norm_bound(weak_adjoint: WeakAdjoint, reference, grid) -> float:
    """Computable upper-bound surrogate for the total-variation-norm error.

    Per component: h * ( |lambda(t_0)| + sum_n |lambda(t_n) - lambda_n|
    + |lambda(t_N)| ), maximized over components.  lambda_n is recovered from
    the step function's jumps; the grid must be equidistant (short self-start
    ramps of smaller steps are tolerated, h is the main stepsize).
    """
    h = _uniform_main_stepsize(grid)
    nodes = grid.nodes
    lam_disc = weak_adjoint.jump_sizes / grid.stepsizes[:, None]
    d = lam_disc.shape[1]
    lam_exact = np.array([reference.classical_adjoint(t) for t in nodes[1:]])
    bound = np.abs(np.asarray(reference.classical_adjoint(nodes[0]), dtype=float)).astype(float)
    bound = bound + np.sum(np.abs(lam_exact - lam_disc), axis=0)
    bound = bound + np.abs(np.asarray(reference.classical_adjoint(nodes[-1]), dtype=float))
    return float(np.max(h * bound))


@dataclass(frozen=True)
class ConvergenceTable:
    """Sweep results: a decreasing parameter column plus named error columns."""

    parameter: str               # "h" or "rtol"
    values: np.ndarray
    errors: dict                 # name -> ndarray aligned with `values`

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(
            self, "errors",
            {k: np.asarray(v, dtype=float) for k, v in self.errors.items()})
        for name, col in self.errors.items():
            if col.shape != self.values.shape:
                raise ValueError(f"error column {name!r} does not match the parameter column")

    def orders(self, name: str) -> np.ndarray:
        """Observed order between consecutive rows (first entry is nan)."""
        e = self.errors[name]
        v = self.values
        out = np.full(v.size, np.nan)
        for i in range(1, v.size):
            if e[i - 1] > 0 and e[i] > 0:
                out[i] = np.log(e[i - 1] / e[i]) / np.log(v[i - 1] / v[i])
        return out


def fit_order(table: ConvergenceTable, column: str | None = None) -> float:
    """Least-squares slope of log(error) against log(parameter).

    Zero or non-finite error entries are excluded with a warning; at least
    three usable rows (strictly decreasing parameter) are required.
    """
    if column is None:
        if len(table.errors) != 1:
            raise ValueError(
                f"table has columns {sorted(table.errors)}; specify one")
        column = next(iter(table.errors))
    v = table.values
    if v.size < 3:
        raise ValueError("order fit needs at least 3 rows")
    if np.any(np.diff(v) >= 0):
        raise ValueError("parameter column must be strictly decreasing")
    e = table.errors[column]
    keep = np.isfinite(e) & (e > 0.0)
    if not np.all(keep):
        warnings.warn(
            f"excluding {int(np.sum(~keep))} zero/failed rows from the order fit "
            f"of {column!r}", RuntimeWarning, stacklevel=2)
    if np.sum(keep) < 3:
        raise ValueError("order fit needs at least 3 usable rows")
    slope = np.polyfit(np.log(v[keep]), np.log(e[keep]), 1)[0]
    return float(slope)
