"""Discrete adjoints of a frozen BDF run and the weak-adjoint step function.

The adjoint sweep differentiates the recorded discretization itself (reverse
mode with all adaptive components pinned), so the resulting gradient is the
exact derivative of the discrete map y_s -> J(y_N) — not an approximation of
the continuous adjoint.  Working backwards over the tape:

    (alpha_0^(N-1) I - h_{N-1} f_y^T(t_N, y_N)) lambda_N = J'(y_N)^T

and for n = N-2 .. 0

    (alpha_0^(n) I - h_n f_y^T(t_{n+1}, y_{n+1})) lambda_{n+1}
        = - sum_{i >= 1} alpha_i^(n+i) lambda_{n+1+i},

with the convention alpha_i^(m) = 0 for i > k_m.  The weak adjoint is the
right-continuous step function with jump h_{n-1} lambda_n at t_n, vanishing
at t_s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bdf import IntegrationTape, SolverError

__all__ = [
    "DiscreteAdjoints",
    "WeakAdjoint",
    "adjoint_sweep",
    "gradient_wrt_initial",
    "assemble_weak_adjoint",
    "rs_pair",
]


@dataclass(frozen=True)
class DiscreteAdjoints:
    """Adjoint variables lambda_1..lambda_N (rows) and the gradient w.r.t. y_s."""

    lambdas: np.ndarray   # (N, d); row n-1 holds lambda_n, i.e. the multiplier at t_n
    gradient: np.ndarray  # (d,)

    def __post_init__(self):
        object.__setattr__(self, "lambdas", np.asarray(self.lambdas, dtype=float))
        object.__setattr__(self, "gradient", np.asarray(self.gradient, dtype=float))

    def at_node(self, n: int) -> np.ndarray:
        """lambda_n for n = 1..N."""
        if not 1 <= n <= self.lambdas.shape[0]:
            raise IndexError(f"adjoint index must be in [1, {self.lambdas.shape[0]}]")
        return self.lambdas[n - 1]


def adjoint_sweep(problem, tape: IntegrationTape) -> DiscreteAdjoints:
    """Backward sweep over a completed tape.

    Each lambda_j solves a d x d system with matrix
    alpha_0^(j-1) I - h_{j-1} f_y^T(t_j, y_j) (dense LU, no factorization
    reuse) and then scatters -alpha_i^(j-1) lambda_j into the right-hand
    sides of the earlier rows its step stencil touches; the contribution
    reaching y_0 accumulates the gradient.  A singular step matrix means the
    stability condition of the scheme is violated.
    """
    n_steps = tape.n_steps
    d = tape.dimension
    nodes = tape.grid.nodes
    h = tape.grid.stepsizes
    eye = np.eye(d)

    rhs = np.zeros((n_steps + 1, d))
    rhs[n_steps] = problem.criterion_gradient(tape.states[n_steps])
    lambdas = np.zeros((n_steps + 1, d))

    for j in range(n_steps, 0, -1):
        step = j - 1
        alphas = tape.coefficients[step].alphas
        fy = problem.jacobian(nodes[j], tape.states[j])
        mat = alphas[0] * eye - h[step] * fy.T
        try:
            lam = np.linalg.solve(mat, rhs[j])
        except np.linalg.LinAlgError as exc:
            raise SolverError(
                f"singular adjoint matrix at t={nodes[j]} "
                "(stability condition violated)"
            ) from exc
        lambdas[j] = lam
        for i in range(1, tape.grid.orders[step] + 1):
            rhs[j - i] -= alphas[i] * lam

    adjoints = DiscreteAdjoints(lambdas=lambdas[1:], gradient=np.zeros(d))
    gradient = gradient_wrt_initial(tape, adjoints)
    return DiscreteAdjoints(lambdas=lambdas[1:], gradient=gradient)


def gradient_wrt_initial(tape: IntegrationTape, adjoints: DiscreteAdjoints) -> np.ndarray:
    """Exact derivative of J(y_N) with respect to the initial state.

    l = - sum over the steps whose stencil reaches back to y_0 (exactly the
    self-start steps with k_n = n+1) of alpha_{n+1}^(n) * lambda_{n+1}.
    """
    if adjoints.lambdas.shape != (tape.n_steps, tape.dimension):
        raise ValueError("adjoints do not match the tape")
    grad = np.zeros(tape.dimension)
    for n in range(tape.n_steps):
        k = tape.grid.orders[n]
        if k >= n + 1:
            grad -= tape.coefficients[n].alphas[n + 1] * adjoints.lambdas[n]
    return grad


@dataclass(frozen=True)
class WeakAdjoint:
    """Right-continuous step function Lambda^h with jump h_{n-1} lambda_n at t_n.

    Lambda^h(t_s) = 0; on (t_n, t_{n+1}) the value is the accumulated sum of
    the jumps up to and including t_n; evaluation at a jump node returns the
    post-jump value.
    """

    t_start: float
    jump_times: np.ndarray   # (N,)
    jump_sizes: np.ndarray   # (N, d)

    def __post_init__(self):
        times = np.asarray(self.jump_times, dtype=float)
        sizes = np.asarray(self.jump_sizes, dtype=float)
        if times.ndim != 1 or sizes.shape[0] != times.size:
            raise ValueError("need one jump vector per jump time")
        if times.size == 0 or times[0] <= self.t_start or np.any(np.diff(times) <= 0):
            raise ValueError("jump times must be strictly increasing after t_start")
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "jump_sizes", sizes)
        cum = np.vstack([np.zeros((1, sizes.shape[1])), np.cumsum(sizes, axis=0)])
        object.__setattr__(self, "_cumulative", cum)

    @property
    def t_final(self) -> float:
        return float(self.jump_times[-1])

    def eval(self, t):
        """Value at time t (scalar or array), right-continuous on (t_s, t_f)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t_start) or np.any(t > self.t_final):
            raise ValueError(
                f"t outside [{self.t_start}, {self.t_final}]"
            )
        idx = np.searchsorted(self.jump_times, t, side="right")
        out = self._cumulative[idx]
        return out if t.ndim else out.reshape(-1)

    __call__ = eval


def assemble_weak_adjoint(tape: IntegrationTape, adjoints: DiscreteAdjoints) -> WeakAdjoint:
    """Build the weak-adjoint step function from a tape and its adjoints."""
    if adjoints.lambdas.shape[0] != tape.n_steps:
        raise ValueError("adjoints do not match the tape")
    h = tape.grid.stepsizes
    return WeakAdjoint(
        t_start=float(tape.grid.nodes[0]),
        jump_times=tape.grid.nodes[1:].copy(),
        jump_sizes=h[:, None] * adjoints.lambdas,
    )


def rs_pair(weak_adjoint: WeakAdjoint, g) -> np.ndarray:
    """Componentwise Riemann-Stieltjes pairing of Lambda^h with a continuous g.

    Because Lambda^h is a pure jump function, the extended RS integral
    collapses to the exact finite sum

        <Lambda^h, g>_j = sum_n  (h_{n-1} lambda_n)_j * g_j(t_n).

    `g` maps t to a scalar (broadcast over components) or a length-d vector.
    Returns the length-d vector of pairings.
    """
    d = weak_adjoint.jump_sizes.shape[1]
    total = np.zeros(d)
    for t, jump in zip(weak_adjoint.jump_times, weak_adjoint.jump_sizes):
        gv = np.asarray(g(t), dtype=float)
        total += jump * (gv if gv.shape == (d,) else np.full(d, float(gv)))
    return total
