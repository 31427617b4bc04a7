"""
Tests for a single implicit BDF step.

Linear right-hand sides give closed-form solutions of the implicit
equation, so the Newton result can be checked exactly: backward Euler on
y' = a*y gives y1 = y0 / (1 - h*a), and a two-step BDF gives
(alpha0 - h*a) y2 = -(alpha1 y1 + alpha2 y0).
"""

import numpy as np
import pytest

from bdfadjoint import (SolverError, compute_coefficients, linear_test_problem,
                        newton_bdf_step)


def _scalar_problem(a):
    problem, _ = linear_test_problem(a=[[a]], y_s=[1.0], t_s=0.0, t_f=1.0)
    return problem


class TestBackwardEuler:
    def test_linear_decay_exact(self):
        """y1 = y0 / (1 - h*a) for backward Euler on y' = a*y."""
        a, h = -2.0, 0.1
        problem = _scalar_problem(a)
        coeffs = compute_coefficients(np.array([0.0, h]), 1)
        res = newton_bdf_step(problem, [np.array([1.0])], coeffs, h, h,
                              predictor=np.array([1.0]))
        np.testing.assert_allclose(res.y, [1.0 / (1.0 - h * a)], rtol=1e-14)
        assert res.residual <= 1e-12

    def test_linear_converges_in_one_iteration(self):
        """For affine f the first Newton update already solves the system."""
        problem = _scalar_problem(-2.0)
        coeffs = compute_coefficients(np.array([0.0, 0.1]), 1)
        res = newton_bdf_step(problem, [np.array([1.0])], coeffs, 0.1, 0.1,
                              predictor=np.array([5.0]))
        assert res.iterations == 1

    def test_zero_iterations_for_exact_predictor(self):
        """A predictor that already satisfies the equation is accepted as-is."""
        a, h = -2.0, 0.1
        problem = _scalar_problem(a)
        coeffs = compute_coefficients(np.array([0.0, h]), 1)
        exact = np.array([1.0 / (1.0 - h * a)])
        res = newton_bdf_step(problem, [np.array([1.0])], coeffs, h, h,
                              predictor=exact)
        assert res.iterations == 0
        np.testing.assert_array_equal(res.y, exact)


class TestTwoStep:
    def test_linear_closed_form(self):
        """(alpha0 - h*a) y2 = -(alpha1 y1 + alpha2 y0), uniform stencil."""
        a, h = -1.0, 0.2
        problem = _scalar_problem(a)
        y0, y1 = 1.0, 1.0 / (1.0 - h * a)
        coeffs = compute_coefficients(np.array([0.0, h, 2 * h]), 2)
        al = coeffs.alphas
        res = newton_bdf_step(problem, [np.array([y1]), np.array([y0])],
                              coeffs, 2 * h, h, predictor=np.array([y1]))
        expect = -(al[1] * y1 + al[2] * y0) / (al[0] - h * a)
        np.testing.assert_allclose(res.y, [expect], rtol=1e-14)

    def test_nonlinear_residual_below_tolerance(self):
        """Catenary step: the reported residual is the actual residual."""
        from bdfadjoint import catenary_problem
        problem, ref = catenary_problem(p=3.0, A=-3.0, t_f=2.0)
        h = 0.01
        coeffs = compute_coefficients(np.array([0.0, h, 2 * h]), 2)
        history = [ref.nominal(h), ref.nominal(0.0)]
        res = newton_bdf_step(problem, history, coeffs, 2 * h, h,
                              predictor=ref.nominal(2 * h))
        al = coeffs.alphas
        r = (al[0] * res.y + al[1] * history[0] + al[2] * history[1]
             - h * problem.rhs(2 * h, res.y))
        assert np.max(np.abs(r)) <= 1e-12
        np.testing.assert_allclose(np.max(np.abs(r)), res.residual, atol=1e-15)
        # the converged step stays within the local truncation error,
        # which is O(h^3 y''') ~ 1e-4 here (y''' is ~270 near t=0)
        np.testing.assert_allclose(res.y, ref.nominal(2 * h), atol=2e-4)


class TestFailures:
    def test_singular_iteration_matrix(self):
        """1 - h*a = 0 makes backward Euler singular: must raise, not return."""
        problem = _scalar_problem(100.0)
        h = 0.01
        coeffs = compute_coefficients(np.array([0.0, h]), 1)
        with pytest.raises(SolverError):
            newton_bdf_step(problem, [np.array([1.0])], coeffs, h, h,
                            predictor=np.array([2.0]))

    def test_history_too_short(self):
        problem = _scalar_problem(-1.0)
        coeffs = compute_coefficients(np.array([0.0, 0.1, 0.2]), 2)
        with pytest.raises(ValueError):
            newton_bdf_step(problem, [np.array([1.0])], coeffs, 0.2, 0.1,
                            predictor=np.array([1.0]))

    def test_divergent_iteration(self):
        """A predictor far outside the basin must fail, not loop forever."""
        problem, _ = linear_test_problem(a=[[0.0]], y_s=[1.0], t_s=0.0, t_f=1.0)

        def bad_rhs(t, y):
            return np.array([float(y[0]) ** 3])

        def bad_jac(t, y):
            return np.array([[3.0 * float(y[0]) ** 2]])

        from bdfadjoint import OdeProblem
        cubic = OdeProblem(name="cubic", dimension=1, initial_time=0.0,
                           final_time=1.0, initial_state=np.array([1.0]),
                           rhs=bad_rhs, jacobian=bad_jac,
                           criterion=lambda y: float(y[0]),
                           criterion_gradient=lambda y: np.array([1.0]))
        coeffs = compute_coefficients(np.array([0.0, 1.0]), 1)
        with pytest.raises(SolverError):
            newton_bdf_step(cubic, [np.array([1.0])], coeffs, 1.0, 1.0,
                            predictor=np.array([1e8]))
