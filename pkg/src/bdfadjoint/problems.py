"""ODE initial value problems with evaluation criteria and analytic references.

Each problem bundles the right-hand side f(t, y), its state Jacobian
f_y(t, y), a scalar criterion J(y) evaluated at the final state, and the
criterion gradient J'(y).  Test problems additionally ship an
:class:`AnalyticReference` holding the exact trajectory y(t), the classical
adjoint lambda(t) solving

    lambda'(t) = -f_y(t, y(t))^T lambda(t),    lambda(t_f) = J'(y(t_f))^T,

and the weak adjoint Lambda(t) = integral of lambda from t_s to t,
normalized so that Lambda(t_s) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm

__all__ = [
    "OdeProblem",
    "AnalyticReference",
    "catenary_problem",
    "linear_test_problem",
    "get_problem",
    "PROBLEMS",
]


@dataclass(frozen=True)
class OdeProblem:
    """An initial value problem y' = f(t, y), y(t_s) = y_s with a criterion J(y(t_f)).

    Parameters
    ----------
    dimension : int
        State dimension d.
    rhs : callable
        f(t, y) -> array of shape (d,).
    jacobian : callable
        f_y(t, y) -> array of shape (d, d).
    criterion : callable
        J(y) -> float, evaluated at the final state.
    criterion_gradient : callable
        J'(y) -> array of shape (d,) (the gradient row).
    initial_time, final_time : float
        Integration interval [t_s, t_f], t_s < t_f.
    initial_state : ndarray
        y_s, shape (d,).
    name : str
        Registry name used by the CLI and by tape serialization.
    params : dict
        Constructor parameters sufficient to rebuild the problem.
    """

    dimension: int
    rhs: Callable[[float, np.ndarray], np.ndarray]
    jacobian: Callable[[float, np.ndarray], np.ndarray]
    criterion: Callable[[np.ndarray], float]
    criterion_gradient: Callable[[np.ndarray], np.ndarray]
    initial_time: float
    final_time: float
    initial_state: np.ndarray
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dimension}")
        if not self.initial_time < self.final_time:
            raise ValueError(
                f"initial_time must precede final_time, got "
                f"[{self.initial_time}, {self.final_time}]"
            )
        y0 = np.asarray(self.initial_state, dtype=float)
        if y0.shape != (self.dimension,):
            raise ValueError(
                f"initial_state has shape {y0.shape}, expected ({self.dimension},)"
            )
        object.__setattr__(self, "initial_state", y0)


@dataclass(frozen=True)
class AnalyticReference:
    """Closed-form (or oracle-grade) reference solutions for a test problem.

    All three callables take a time t and return an array of shape (d,).
    ``weak_adjoint`` is normalized to vanish at the initial time.
    """

    nominal: Callable[[float], np.ndarray]
    classical_adjoint: Callable[[float], np.ndarray]
    weak_adjoint: Callable[[float], np.ndarray]


def _atan_exp(u):
    """arctan(exp(u)) without overflow for large positive u."""
    u = np.asarray(u, dtype=float)
    out = np.where(u > 0.0, 0.5 * np.pi - np.arctan(np.exp(-np.abs(u))),
                   np.arctan(np.exp(-np.abs(u))))
    return out if out.ndim else float(out)


def _log_cosh(u):
    """log(cosh(u)) without overflow."""
    u = abs(u)
    return u + np.log1p(np.exp(-2.0 * u)) - np.log(2.0)


def catenary_problem(p: float, A: float, t_f: float):
    """Catenary hanging-chain test problem on [0, t_f].

    The second-order ODE y'' = p * sqrt(1 + (y')^2) written as a first-order
    system::

        y1' = y2,        y1(0) = cosh(A) / p,
        y2' = p * sqrt(1 + y2**2),   y2(0) = sinh(A),

    with criterion J(y) = y1.  The exact solution is the catenary

        y(t) = [B + cosh(p t + A) / p,  sinh(p t + A)],

    where A and B are fixed by the initial values (A = asinh(y2(0)),
    B = y1(0) - cosh(A)/p); this constructor takes A directly and uses
    B = 0, so y1(0) = cosh(A)/p.  B only shifts y1 by a constant and has no
    effect on the dynamics, the adjoints, or J'.

    The classical adjoint is

        lambda1(t) = 1,
        lambda2(t) = (sinh(p t_f + A) * sech(p t + A) - tanh(p t + A)) / p,

    and the weak adjoint (antiderivative of lambda, zero at t = 0) is

        Lambda1(t) = t,
        Lambda2(t) = (2 / p**2) * sinh(p t_f + A)
                         * (arctan(e**(p t + A)) - arctan(e**A))
                     - (log(cosh(p t + A)) - log(cosh(A))) / p**2.

    Returns
    -------
    (OdeProblem, AnalyticReference)
    """
    p = float(p)
    A = float(A)
    t_f = float(t_f)
    if p <= 0.0:
        raise ValueError(f"catenary parameter p must be positive, got {p}")

    y0 = np.array([np.cosh(A) / p, np.sinh(A)])

    def rhs(t, y):
        return np.array([y[1], p * np.sqrt(1.0 + y[1] ** 2)])

    def jacobian(t, y):
        return np.array([
            [0.0, 1.0],
            [0.0, p * y[1] / np.sqrt(1.0 + y[1] ** 2)],
        ])

    def criterion(y):
        return float(y[0])

    def criterion_gradient(y):
        return np.array([1.0, 0.0])

    problem = OdeProblem(
        dimension=2,
        rhs=rhs,
        jacobian=jacobian,
        criterion=criterion,
        criterion_gradient=criterion_gradient,
        initial_time=0.0,
        final_time=t_f,
        initial_state=y0,
        name="catenary",
        params={"p": p, "A": A, "tf": t_f},
    )

    s_f = np.sinh(p * t_f + A)

    def nominal(t):
        u = p * t + A
        return np.array([np.cosh(u) / p, np.sinh(u)])

    def classical_adjoint(t):
        u = p * t + A
        return np.array([1.0, (s_f / np.cosh(u) - np.tanh(u)) / p])

    def weak_adjoint(t):
        u = p * t + A
        second = (2.0 / p**2) * s_f * (_atan_exp(u) - _atan_exp(A)) \
            - (_log_cosh(u) - _log_cosh(A)) / p**2
        return np.array([float(t), second])

    reference = AnalyticReference(nominal, classical_adjoint, weak_adjoint)
    return problem, reference


def linear_test_problem(a, y_s, t_s: float, t_f: float, c=None):
    """Linear-dynamics oracle problem y' = a @ y with criterion J(y) = c @ y.

    The nominal solution is the matrix exponential flow
    y(t) = expm(a (t - t_s)) @ y_s, the classical adjoint is the closed form
    lambda(t) = expm(a^T (t_f - t)) @ c, and the weak adjoint is produced by
    adaptive quadrature of lambda to absolute/relative tolerance 1e-12
    (only lambda has a closed form for general a).

    Parameters
    ----------
    a : array_like
        d x d system matrix (a scalar is treated as a 1x1 matrix).
    y_s : array_like
        Initial state of length d.
    t_s, t_f : float
        Integration interval.
    c : array_like, optional
        Criterion vector; defaults to the first unit vector.

    Returns
    -------
    (OdeProblem, AnalyticReference)
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    d = a.shape[0]
    if a.shape != (d, d):
        raise ValueError(f"system matrix must be square, got shape {a.shape}")
    y_s = np.atleast_1d(np.asarray(y_s, dtype=float))
    if c is None:
        c = np.zeros(d)
        c[0] = 1.0
    else:
        c = np.atleast_1d(np.asarray(c, dtype=float))

    def rhs(t, y):
        return a @ y

    def jacobian(t, y):
        return a.copy()

    def criterion(y):
        return float(c @ y)

    def criterion_gradient(y):
        return c.copy()

    problem = OdeProblem(
        dimension=d,
        rhs=rhs,
        jacobian=jacobian,
        criterion=criterion,
        criterion_gradient=criterion_gradient,
        initial_time=float(t_s),
        final_time=float(t_f),
        initial_state=y_s,
        name="linear",
        params={
            "a": a.tolist(),
            "y0": y_s.tolist(),
            "t0": float(t_s),
            "tf": float(t_f),
            "c": c.tolist(),
        },
    )

    def nominal(t):
        return expm(a * (t - t_s)) @ y_s

    def classical_adjoint(t):
        return expm(a.T * (t_f - t)) @ c

    def weak_adjoint(t):
        out = np.empty(d)
        for j in range(d):
            val, _ = quad(lambda tau: classical_adjoint(tau)[j], t_s, t,
                          epsabs=1e-12, epsrel=1e-12, limit=200)
            out[j] = val
        return out

    reference = AnalyticReference(nominal, classical_adjoint, weak_adjoint)
    return problem, reference


def _make_catenary(p=3.0, A=-3.0, tf=2.0):
    return catenary_problem(p, A, tf)


def _make_linear(a=((0.0, 1.0), (0.0, 0.0)), y0=(1.0, 1.0), t0=0.0, tf=1.0,
                 c=None):
    return linear_test_problem(a, y0, t0, tf, c=c)


PROBLEMS = {
    "catenary": _make_catenary,
    "linear": _make_linear,
}


def get_problem(name: str, **params):
    """Look up a shipped problem by registry name.

    Returns (OdeProblem, AnalyticReference).  Unknown names raise ValueError.
    """
    if name not in PROBLEMS:
        known = ", ".join(sorted(PROBLEMS))
        raise ValueError(f"unknown problem {name!r} (available: {known})")
    return PROBLEMS[name](**params)
