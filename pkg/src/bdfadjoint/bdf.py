"""Variable-order, variable-stepsize BDF integration on arbitrary node sequences.

The k-step BDF scheme on (generally nonuniform) nodes reads

    sum_{i=0..k_n} alpha_i^(n) y_{n+1-i} = h_n f(t_{n+1}, y_{n+1}),

where alpha_i^(n) = h_n * Ldot_i^(n)(t_{n+1}) comes from differentiating the
Lagrange basis over the step's stencil.  Each implicit step is solved by a
Newton iteration with matrix alpha_0 * I - h_n * f_y.  Completed runs are
recorded on an immutable :class:`IntegrationTape` that carries everything a
backward (adjoint) sweep or an exact re-run needs: nodes, stepsizes, orders,
states, per-step coefficients and Newton statistics.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

__all__ = [
    "MAX_ORDER",
    "SolverError",
    "BdfCoefficients",
    "TimeGrid",
    "IntegrationTape",
    "NewtonResult",
    "DenseOutput",
    "compute_coefficients",
    "newton_bdf_step",
    "integrate_nonadaptive",
    "integrate_adaptive",
    "dense_eval",
    "replay_integration",
    "tape_residuals",
]

MAX_ORDER = 6
NEWTON_MAXITER = 7
NEWTON_TOL_NONADAPTIVE = 1e-12   # absolute residual, max-norm
RATE_REFACTOR = 0.25             # refactor iteration matrix above this rate
MIN_FACTOR = 0.2
MAX_FACTOR = 2.5
SAFETY = 0.9
EPS = np.finfo(float).eps


class SolverError(RuntimeError):
    """Raised when an integration or adjoint run cannot be completed."""


# ---------------------------------------------------------------------------
# Lagrange basis helpers (shared by coefficients, predictor and dense output)
# ---------------------------------------------------------------------------

def _lagrange_values(nodes, x):
    """Values L_i(x) of the Lagrange basis over `nodes`, i = 0..len(nodes)-1."""
    nodes = np.asarray(nodes, dtype=float)
    m = nodes.size
    vals = np.empty(m)
    for i in range(m):
        num = 1.0
        den = 1.0
        for j in range(m):
            if j == i:
                continue
            num *= x - nodes[j]
            den *= nodes[i] - nodes[j]
        vals[i] = num / den
    return vals


def _lagrange_derivatives(nodes, x):
    """Derivatives Ldot_i(x), via the product-rule sum over the basis factors."""
    nodes = np.asarray(nodes, dtype=float)
    m = nodes.size
    ders = np.empty(m)
    for i in range(m):
        den = 1.0
        for j in range(m):
            if j != i:
                den *= nodes[i] - nodes[j]
        total = 0.0
        for ell in range(m):
            if ell == i:
                continue
            term = 1.0
            for j in range(m):
                if j == i or j == ell:
                    continue
                term *= x - nodes[j]
            total += term
        ders[i] = total / den
    return ders


@dataclass(frozen=True)
class BdfCoefficients:
    """BDF step coefficients alpha_0..alpha_k for one step of order k."""

    order: int
    alphas: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alphas", np.asarray(self.alphas, dtype=float))


def compute_coefficients(nodes, order: int) -> BdfCoefficients:
    """BDF coefficients for the stencil t_{n+1-k}..t_{n+1} (ascending).

    alpha_i = h_n * Ldot_i(t_{n+1}) where L_i interpolates at t_{n+1-i} and
    h_n = t_{n+1} - t_n.  The returned alphas are ordered alpha_0..alpha_k,
    i.e. newest node first.
    """
    nodes = np.asarray(nodes, dtype=float)
    if not isinstance(order, (int, np.integer)):
        raise ValueError(f"order must be an integer, got {order!r}")
    order = int(order)
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"order must be in [1, {MAX_ORDER}], got {order}")
    if nodes.shape != (order + 1,):
        raise ValueError(
            f"stencil for order {order} needs {order + 1} nodes, got {nodes.shape}"
        )
    if np.any(np.diff(nodes) <= 0.0):
        raise ValueError("stencil nodes must be strictly increasing")
    h = nodes[-1] - nodes[-2]
    # _lagrange_derivatives orders basis functions by ascending node; alpha_i
    # belongs to t_{n+1-i}, so reverse.
    alphas = h * _lagrange_derivatives(nodes, nodes[-1])[::-1]
    return BdfCoefficients(order=order, alphas=alphas)


# ---------------------------------------------------------------------------
# Grid and tape
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Nodes t_0..t_N and per-step orders k_0..k_{N-1} of an integration."""

    nodes: np.ndarray
    orders: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        orders = np.asarray(self.orders, dtype=int)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("grid needs at least two nodes")
        if orders.shape != (nodes.size - 1,):
            raise ValueError("need exactly one order per step")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("grid nodes must be strictly increasing")
        for n, k in enumerate(orders):
            if not 1 <= k <= min(n + 1, MAX_ORDER):
                raise ValueError(
                    f"step {n} has order {k}, admissible range is "
                    f"[1, {min(n + 1, MAX_ORDER)}]"
                )
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "orders", orders)

    @property
    def stepsizes(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1


@dataclass(frozen=True)
class IntegrationTape:
    """Frozen record of a forward integration, sufficient for adjoint replay."""

    problem_name: str
    problem_params: dict
    dimension: int
    mode: str
    grid: TimeGrid
    states: np.ndarray                       # (N+1, d)
    coefficients: tuple                      # N BdfCoefficients
    newton_iterations: np.ndarray            # (N,)
    newton_residuals: np.ndarray             # (N,)
    newton_tolerances: np.ndarray            # (N,)
    error_estimates: Optional[np.ndarray] = None   # (N,), adaptive runs only
    driver_params: dict = field(default_factory=dict)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        n = self.grid.n_steps
        if states.shape != (n + 1, self.dimension):
            raise ValueError(
                f"states have shape {states.shape}, expected {(n + 1, self.dimension)}"
            )
        if len(self.coefficients) != n:
            raise ValueError("need exactly one coefficient set per step")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "newton_iterations",
                           np.asarray(self.newton_iterations, dtype=int))
        object.__setattr__(self, "newton_residuals",
                           np.asarray(self.newton_residuals, dtype=float))
        object.__setattr__(self, "newton_tolerances",
                           np.asarray(self.newton_tolerances, dtype=float))

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def tape_residuals(problem, tape) -> np.ndarray:
    """Max-norm BDF residual of every recorded step (should sit below tolerance)."""
    nodes = tape.grid.nodes
    h = tape.grid.stepsizes
    out = np.empty(tape.n_steps)
    for n in range(tape.n_steps):
        k = tape.grid.orders[n]
        alphas = tape.coefficients[n].alphas
        acc = alphas[0] * tape.states[n + 1]
        for i in range(1, k + 1):
            acc = acc + alphas[i] * tape.states[n + 1 - i]
        r = acc - h[n] * problem.rhs(nodes[n + 1], tape.states[n + 1])
        out[n] = np.max(np.abs(r))
    return out


# ---------------------------------------------------------------------------
# Newton iteration for one implicit step
# ---------------------------------------------------------------------------

class NewtonResult(NamedTuple):
    y: np.ndarray
    iterations: int
    residual: float


class _FactorCache:
    """LU factorization of alpha_0*I - h*f_y, reused across steps while valid."""

    def __init__(self):
        self.lu = None
        self.h = None
        self.order = None
        self.alpha0 = None

    def matches(self, h, order, alpha0):
        # The iteration matrix is alpha0*I - h*f_y, so a stencil change that
        # moves alpha0 (e.g. startup ramp -> uniform run) invalidates the LU
        # even at fixed (h, order).
        return (self.lu is not None and self.order == order
                and self.h is not None and abs(self.h - h) <= 4.0 * EPS * abs(h)
                and abs(self.alpha0 - alpha0) <= 4.0 * EPS * abs(alpha0))

    def refactor(self, problem, t_new, y, h, alpha0, order):
        m = alpha0 * np.eye(problem.dimension) - h * problem.jacobian(t_new, y)
        with warnings.catch_warnings():
            # exact singularity is detected below and raised as a failure
            warnings.simplefilter("ignore", LinAlgWarning)
            lu, piv = lu_factor(m)
        diag = np.abs(np.diag(lu))
        if not np.all(np.isfinite(lu)) or np.any(diag <= 1e3 * EPS * max(np.max(diag), 1.0)):
            raise _StepFailure(f"singular Newton iteration matrix at t={t_new}")
        self.lu = (lu, piv)
        self.h = h
        self.order = order
        self.alpha0 = alpha0


class _StepFailure(Exception):
    """Internal: one implicit step failed (adaptive driver retries, others abort)."""


def _newton_iterate(problem, t_new, h, alphas, history, predictor, tol,
                    cache: _FactorCache) -> NewtonResult:
    """Solve the implicit BDF equation for y_{n+1}.

    `history` lists prior states newest first (y_n, y_{n-1}, ...), pairing
    with alphas[1:].  The iteration matrix is refactored only when
    (h, order, alpha_0) changed since the cached factorization or the
    contraction rate exceeds RATE_REFACTOR; convergence is tested on the
    max-norm residual.  If the budget runs out -- typically because a matrix
    reused over many steps has drifted -- the matrix is refactored at the
    current iterate and the iteration gets one more budget before failing.
    """
    back = np.zeros(problem.dimension)
    for i in range(1, len(alphas)):
        back = back + alphas[i] * history[i - 1]

    def residual(y):
        return alphas[0] * y + back - h * problem.rhs(t_new, y)

    y = np.array(predictor, dtype=float)
    r = residual(y)
    rnorm = np.max(np.abs(r))
    if not np.isfinite(rnorm):
        raise _StepFailure(f"non-finite residual at t={t_new}")
    if rnorm <= tol:
        return NewtonResult(y, 0, float(rnorm))

    if not cache.matches(h, len(alphas) - 1, alphas[0]):
        cache.refactor(problem, t_new, y, h, alphas[0], len(alphas) - 1)

    total = 0
    for attempt in range(2):
        prev_step_norm = None
        for _ in range(NEWTON_MAXITER):
            total += 1
            delta = lu_solve(cache.lu, -r)
            if not np.all(np.isfinite(delta)):
                raise _StepFailure(f"Newton update diverged at t={t_new}")
            y = y + delta
            r = residual(y)
            rnorm = np.max(np.abs(r))
            if not np.isfinite(rnorm):
                raise _StepFailure(f"non-finite residual at t={t_new}")
            if rnorm <= tol:
                return NewtonResult(y, total, float(rnorm))
            step_norm = np.max(np.abs(delta))
            if prev_step_norm is not None and step_norm > RATE_REFACTOR * prev_step_norm:
                cache.refactor(problem, t_new, y, h, alphas[0], len(alphas) - 1)
            prev_step_norm = step_norm
        if attempt == 0:
            cache.refactor(problem, t_new, y, h, alphas[0], len(alphas) - 1)
    raise _StepFailure(
        f"Newton did not converge within {total} iterations at t={t_new} "
        f"(residual {rnorm:.3e}, tolerance {tol:.3e})"
    )


def newton_bdf_step(problem, history, coefficients: BdfCoefficients, t_next,
                    h, predictor, tol: float = NEWTON_TOL_NONADAPTIVE) -> NewtonResult:
    """One implicit BDF step, solved to the given absolute residual tolerance.

    Parameters
    ----------
    history : sequence of arrays
        The k prior states, newest first: y_n, y_{n-1}, ..., y_{n+1-k}.
    coefficients : BdfCoefficients
        Coefficients of the step (see :func:`compute_coefficients`).
    predictor : array
        Start iterate for the Newton iteration.

    Returns
    -------
    NewtonResult with the new state, the iteration count and the final
    max-norm residual.  Non-convergence and singular iteration matrices
    raise SolverError.
    """
    if len(history) < coefficients.order:
        raise ValueError(
            f"order {coefficients.order} needs {coefficients.order} prior states, "
            f"got {len(history)}"
        )
    try:
        return _newton_iterate(problem, float(t_next), float(h),
                               coefficients.alphas, history,
                               np.asarray(predictor, dtype=float),
                               float(tol), _FactorCache())
    except _StepFailure as exc:
        raise SolverError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Predictor and divided differences
# ---------------------------------------------------------------------------

def _predict(nodes, states, orders, n, t_new):
    """Extrapolate the previous interval's interpolation polynomial to t_new."""
    if n == 0:
        return np.array(states[0], dtype=float)
    k_prev = orders[n - 1]
    stencil = nodes[n - k_prev:n + 1]
    weights = _lagrange_values(stencil, t_new)
    acc = weights[0] * states[n - k_prev]
    for j in range(1, k_prev + 1):
        acc = acc + weights[j] * states[n - k_prev + j]
    return acc


def _divided_difference(ts, ys):
    """Divided difference over the points (ts[0], ys[0]), ...; ys are vectors."""
    table = [np.array(y, dtype=float) for y in ys]
    m = len(table)
    for level in range(1, m):
        for i in range(m - level):
            table[i] = (table[i] - table[i + 1]) / (ts[i] - ts[i + level])
    return table[0]


def _error_estimate(nodes, states, t_new, y_new, q):
    """Local error estimate for order q after accepting (t_new, y_new).

    Built from the divided difference over the q+2 trailing points; on a
    uniform grid this equals h^(q+1) * ||y^(q+1)|| / (q+1), the standard
    order-q error constant applied to the predictor-corrector difference.
    """
    n_hist = len(states)
    if q + 1 > n_hist:
        raise ValueError(f"order-{q} estimate needs {q + 1} prior points, have {n_hist}")
    ts = [t_new] + [nodes[n_hist - 1 - j] for j in range(q + 1)]
    ys = [y_new] + [states[n_hist - 1 - j] for j in range(q + 1)]
    dd = _divided_difference(ts, ys)
    h_new = t_new - nodes[n_hist - 1]
    scale = h_new
    for j in range(1, q):
        scale *= t_new - nodes[n_hist - 1 - j]
    return float(np.linalg.norm(dd * (scale * h_new), 2))


# ---------------------------------------------------------------------------
# Non-adaptive driver
# ---------------------------------------------------------------------------

def _nonadaptive_plan(k, h, n_main):
    """Per-step (node fraction, order) plan; fractions are multiples of h.

    The self-start fills exactly the first main interval: for k = 2 it is two
    order-1 steps of h/2; for k >= 3 it is k-1 order-ascending steps of
    length h * 2^j / 2^(k-1) (orders 1..k-1) followed by one order-k step of
    h / 2^(k-1).  The remaining n_main - 1 steps run at (k, h).
    """
    fracs = []
    orders = []
    if k == 1:
        fracs.append(1.0)
        orders.append(1)
    elif k == 2:
        fracs.extend([0.5, 1.0])
        orders.extend([1, 1])
    else:
        denom = 2.0 ** (k - 1)
        acc = 0.0
        for j in range(k - 1):
            acc += 2.0 ** j / denom
            fracs.append(acc)
            orders.append(j + 1)
        fracs.append(1.0)
        orders.append(k)
    for m in range(2, n_main + 1):
        fracs.append(float(m))
        orders.append(k)
    return np.array(fracs), np.array(orders, dtype=int)


def integrate_nonadaptive(problem, k: int, h: float) -> IntegrationTape:
    """Integrate with fixed order k and main stepsize h.

    Requires (t_f - t_s) / h to be an integer N >= k.  The order ramp of the
    self-start tiles the first main interval exactly (see _nonadaptive_plan),
    so the grid hits t_f exactly.  Newton failures abort with the failing
    step index.
    """
    if not isinstance(k, (int, np.integer)) or not 1 <= int(k) <= MAX_ORDER:
        raise ValueError(f"order must be an integer in [1, {MAX_ORDER}], got {k}")
    k = int(k)
    h = float(h)
    if h <= 0.0:
        raise ValueError(f"stepsize must be positive, got {h}")
    span = problem.final_time - problem.initial_time
    n_main = span / h
    if abs(n_main - round(n_main)) > 1e-8 * max(1.0, abs(n_main)):
        raise ValueError(
            f"(t_f - t_s) / h = {n_main} is not an integer; "
            "choose h so the grid lands on t_f"
        )
    n_main = int(round(n_main))
    if n_main < k:
        raise ValueError(f"need at least k = {k} main intervals, got {n_main}")

    fracs, orders = _nonadaptive_plan(k, h, n_main)
    nodes = problem.initial_time + h * fracs
    nodes[-1] = problem.final_time
    nodes = np.concatenate(([problem.initial_time], nodes))

    n_steps = orders.size
    d = problem.dimension
    states = np.empty((n_steps + 1, d))
    states[0] = problem.initial_state
    coeffs = []
    iters = np.zeros(n_steps, dtype=int)
    resid = np.zeros(n_steps)
    tols = np.full(n_steps, NEWTON_TOL_NONADAPTIVE)
    cache = _FactorCache()

    for n in range(n_steps):
        kn = orders[n]
        stencil = nodes[n + 1 - kn:n + 2]
        c = compute_coefficients(stencil, int(kn))
        coeffs.append(c)
        predictor = _predict(nodes, states, orders, n, nodes[n + 1])
        history = [states[n - i] for i in range(kn)]
        try:
            res = _newton_iterate(problem, nodes[n + 1], nodes[n + 1] - nodes[n],
                                  c.alphas, history, predictor,
                                  NEWTON_TOL_NONADAPTIVE, cache)
        except _StepFailure as exc:
            raise SolverError(f"step {n} failed: {exc}") from exc
        states[n + 1] = res.y
        iters[n] = res.iterations
        resid[n] = res.residual

    grid = TimeGrid(nodes=nodes, orders=orders)
    return IntegrationTape(
        problem_name=problem.name,
        problem_params=dict(problem.params),
        dimension=d,
        mode="nonadaptive",
        grid=grid,
        states=states,
        coefficients=tuple(coeffs),
        newton_iterations=iters,
        newton_residuals=resid,
        newton_tolerances=tols,
        error_estimates=None,
        driver_params={"order": k, "h": h},
    )


# ---------------------------------------------------------------------------
# Adaptive driver
# ---------------------------------------------------------------------------

def _adaptive_newton_tol(rtol, h, y_scale):
    tol = 1e-2 * min(rtol, h * h)
    # floor keeps clamped (very small) final steps solvable in float64
    return max(tol, 1e2 * EPS) * (1.0 + y_scale)


def integrate_adaptive(problem, rtol: float, atol: float = 1e-12) -> IntegrationTape:
    """Integrate with adaptive order and stepsize from t_s to t_f (hit exactly).

    Every accepted step satisfies ||est||_2 <= rtol * ||y||_2 + atol, where
    est is the divided-difference local error estimate (explicit-Euler
    comparison on the very first step).  The order moves within
    {k-1, k, k+1}, picking the candidate that allows the largest next step;
    increases are deferred until k+1 steps were taken at the current order.
    Stepsize changes are limited to [0.2, 2.5] per step with safety 0.9.
    Stepsize underflow aborts.
    """
    rtol = float(rtol)
    atol = float(atol)
    if rtol <= 0.0 or atol <= 0.0:
        raise ValueError(f"tolerances must be positive, got rtol={rtol}, atol={atol}")

    t0 = problem.initial_time
    tf = problem.final_time
    d = problem.dimension
    span = tf - t0

    f0 = problem.rhs(t0, problem.initial_state)
    h = span * min(1e-2, np.sqrt(rtol)) / (1.0 + np.linalg.norm(f0, 2))
    h = min(h, span)

    nodes = [t0]
    states = [np.array(problem.initial_state, dtype=float)]
    orders = []
    coeffs = []
    iters = []
    resid = []
    tols = []
    estimates = []

    k = 1
    steps_at_order = 0
    rejects_in_a_row = 0
    cache = _FactorCache()
    t = t0
    n = 0

    while t < tf:
        if h < 1e3 * EPS * max(abs(t), abs(tf)):
            raise SolverError(
                f"stepsize underflow at t={t} (h={h:.3e}) after step {n}"
            )
        t_new = tf if t + h >= tf else t + h
        h_eff = t_new - t

        stencil = np.append(nodes[n + 1 - k:n + 1], t_new)
        c = compute_coefficients(stencil, k)
        predictor = _predict(nodes, states, orders, n, t_new)
        tol_newton = _adaptive_newton_tol(rtol, h_eff,
                                          np.linalg.norm(predictor, 2))
        history = [states[n - i] for i in range(k)]
        try:
            res = _newton_iterate(problem, t_new, h_eff, c.alphas, history,
                                  predictor, tol_newton, cache)
        except _StepFailure:
            h = h_eff / 2.0
            cache.lu = None
            steps_at_order = 0
            rejects_in_a_row += 1
            continue

        if n == 0:
            est_vec = 0.5 * (res.y - states[0] - h_eff * f0)
            err = float(np.linalg.norm(est_vec, 2))
        else:
            err = _error_estimate(nodes, states, t_new, res.y, k)
        tol_acc = rtol * np.linalg.norm(res.y, 2) + atol

        if not np.isfinite(err) or err > tol_acc:
            factor = SAFETY * (tol_acc / err) ** (1.0 / (k + 1)) if err > 0 else 1.0
            h = h_eff * min(max(factor, MIN_FACTOR), 1.0)
            rejects_in_a_row += 1
            if rejects_in_a_row >= 3:
                h = min(h, h_eff / 2.0)
            steps_at_order = 0
            continue

        nodes.append(t_new)
        states.append(res.y)
        orders.append(k)
        coeffs.append(c)
        iters.append(res.iterations)
        resid.append(res.residual)
        tols.append(tol_newton)
        estimates.append(err)
        t = t_new
        n += 1
        steps_at_order += 1
        rejects_in_a_row = 0

        # Order/stepsize selection for the next step: among k-1, k, k+1 pick
        # the order whose estimate allows the largest stepsize (ties favor
        # the lower order; increases deferred until k+1 steps at current k).
        best_k = k
        best_h = None
        candidates = [k]
        if k > 1:
            candidates.append(k - 1)
        if k < MAX_ORDER and steps_at_order >= k + 1:
            candidates.append(k + 1)
        for q in sorted(candidates):
            if q == k:
                est_q = err
            else:
                # needs q+1 prior points besides the newest state
                if q + 1 > len(states) - 1:
                    continue
                est_q = _error_estimate(nodes[:-1], states[:-1], t_new,
                                        states[-1], q)
            if est_q > 0.0:
                factor = SAFETY * (tol_acc / est_q) ** (1.0 / (q + 1))
            else:
                factor = MAX_FACTOR
            h_q = h_eff * min(max(factor, MIN_FACTOR), MAX_FACTOR)
            if best_h is None or h_q > best_h * (1.0 + 1e-10):
                best_h = h_q
                best_k = q
        if best_k != k:
            steps_at_order = 0
            k = best_k
        h = best_h

    grid = TimeGrid(nodes=np.array(nodes), orders=np.array(orders, dtype=int))
    return IntegrationTape(
        problem_name=problem.name,
        problem_params=dict(problem.params),
        dimension=d,
        mode="adaptive",
        grid=grid,
        states=np.array(states),
        coefficients=tuple(coeffs),
        newton_iterations=np.array(iters, dtype=int),
        newton_residuals=np.array(resid),
        newton_tolerances=np.array(tols),
        error_estimates=np.array(estimates),
        driver_params={"rtol": rtol, "atol": atol},
    )


# ---------------------------------------------------------------------------
# Dense output
# ---------------------------------------------------------------------------

class DenseOutput:
    """Piecewise interpolation through a tape's states (continuous trajectory).

    On the interval (t_n, t_{n+1}] the evaluation uses the step's own
    stencil polynomial sum_i L_i(t) * y_{n+1-i} of degree k_n; at grid nodes
    the stored states are returned exactly.
    """

    def __init__(self, tape: IntegrationTape):
        self.tape = tape

    def __call__(self, t: float) -> np.ndarray:
        tape = self.tape
        nodes = tape.grid.nodes
        t = float(t)
        if t < nodes[0] or t > nodes[-1]:
            raise ValueError(
                f"t={t} outside the integration interval [{nodes[0]}, {nodes[-1]}]"
            )
        idx = int(np.searchsorted(nodes, t, side="left"))
        if nodes[idx] == t:
            return tape.states[idx].copy()
        n = idx - 1  # t lies in (t_n, t_{n+1})
        k = tape.grid.orders[n]
        stencil = nodes[n + 1 - k:n + 2]
        weights = _lagrange_values(stencil, t)
        acc = weights[-1] * tape.states[n + 1]
        for i in range(1, k + 1):
            acc = acc + weights[-1 - i] * tape.states[n + 1 - i]
        return acc


def dense_eval(tape: IntegrationTape, t: float) -> np.ndarray:
    """Evaluate the tape's interpolated trajectory at time t."""
    return DenseOutput(tape)(t)


# ---------------------------------------------------------------------------
# Frozen replay (the map differentiated by finite differences)
# ---------------------------------------------------------------------------

def replay_integration(problem, tape: IntegrationTape, y_start=None) -> np.ndarray:
    """Re-run the forward scheme with grid, orders and iteration counts frozen.

    Each step performs exactly the recorded number of Newton iterations —
    no convergence tests, no factorization reuse (the matrix is rebuilt at
    every iterate) — starting from the same extrapolation predictor.  With
    all adaptive components pinned, the state-to-state map is smooth in the
    initial state, which makes it the right object for finite-difference
    derivative checks.  Returns the full (N+1, d) state array.
    """
    nodes = tape.grid.nodes
    orders = tape.grid.orders
    d = tape.dimension
    y0 = tape.states[0] if y_start is None else np.asarray(y_start, dtype=float)
    states = np.empty((tape.n_steps + 1, d))
    states[0] = y0
    eye = np.eye(d)
    for n in range(tape.n_steps):
        k = orders[n]
        alphas = tape.coefficients[n].alphas
        t_new = nodes[n + 1]
        h = t_new - nodes[n]
        y = _predict(nodes, states, orders, n, t_new)
        back = np.zeros(d)
        for i in range(1, k + 1):
            back = back + alphas[i] * states[n + 1 - i]
        for _ in range(int(tape.newton_iterations[n])):
            r = alphas[0] * y + back - h * problem.rhs(t_new, y)
            m = alphas[0] * eye - h * problem.jacobian(t_new, y)
            try:
                delta = np.linalg.solve(m, -r)
            except np.linalg.LinAlgError as exc:
                raise SolverError(f"singular iteration matrix in replay at t={t_new}") from exc
            if not np.all(np.isfinite(delta)):
                raise SolverError(f"replay diverged at t={t_new}")
            y = y + delta
        states[n + 1] = y
    return states
