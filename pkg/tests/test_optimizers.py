import numpy as np
import pytest
from scipy.optimize import minimize

from app.common.errors import RejectedInputError
from app.cvpm.optimizers import (
    ActiveSetQpSolver,
    LpProblem,
    QpProblem,
    kkt_residual,
    solve_lp,
    solve_qp,
)

BOX_G = np.vstack([np.eye(3), -np.eye(3)])
BOX_H = np.ones(6)


class TestLp:
    def test_optimal_with_multipliers(self):
        G = np.vstack([np.eye(2), -np.eye(2)])
        c = np.array([-1.0, -2.0])
        x, status = solve_lp(LpProblem(c, G, np.ones(4)))
        assert status.ok
        assert np.allclose(x, [1.0, 1.0])
        lam = status.multipliers
        assert np.all(lam >= 0)
        assert np.allclose(c + G.T @ lam, 0.0, atol=1e-8)

    def test_infeasible_certificate(self):
        G = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        h = np.array([0.0, -1.0, 1.0])
        x, status = solve_lp(LpProblem(np.zeros(2), G, h))
        assert x is None
        assert status.kind == "infeasible"
        y = status.certificate
        assert np.all(y >= -1e-9)
        assert np.allclose(G.T @ y, 0.0, atol=1e-8)
        assert h @ y < 0

    def test_unbounded(self):
        x, status = solve_lp(LpProblem(np.array([-1.0]), np.array([[-1.0]]), np.array([0.0])))
        assert x is None
        assert status.kind == "unbounded"

    def test_non_finite_data_rejected(self):
        with pytest.raises(RejectedInputError):
            LpProblem(np.array([1.0]), np.array([[1.0]]), np.array([np.inf]))


class TestQp:
    def test_box_projection(self):
        a = np.array([2.0, -3.0, 0.5])
        x, status = solve_qp(QpProblem(np.eye(3), -a, BOX_G, BOX_H))
        assert status.ok
        assert np.allclose(x, [1.0, -1.0, 0.5], atol=1e-9)
        assert status.kkt_residual <= 1e-7
        assert sorted(status.active_set) == [0, 4]

    def test_matches_scipy_on_random_convex_problem(self, rng):
        M = rng.normal(size=(4, 4))
        H = M @ M.T + 0.1 * np.eye(4)
        f = rng.normal(size=4)
        G = rng.normal(size=(6, 4))
        h = np.abs(rng.normal(size=6)) + 0.1
        x, status = solve_qp(QpProblem(H, f, G, h))
        assert status.ok

        reference = minimize(
            lambda z: 0.5 * z @ H @ z + f @ z,
            np.zeros(4),
            jac=lambda z: H @ z + f,
            constraints=[{"type": "ineq", "fun": lambda z: h - G @ z, "jac": lambda z: -G}],
            method="SLSQP",
            options={"ftol": 1e-12, "maxiter": 500},
        )
        assert 0.5 * x @ H @ x + f @ x == pytest.approx(reference.fun, abs=1e-6)

    def test_objective_not_above_random_feasible_points(self, rng):
        M = rng.normal(size=(3, 3))
        H = M @ M.T + 0.1 * np.eye(3)
        f = rng.normal(size=3)
        G = np.vstack([BOX_G, rng.normal(size=(4, 3))])
        h = np.concatenate([BOX_H, np.abs(rng.normal(size=4)) + 0.1])
        x, status = solve_qp(QpProblem(H, f, G, h))
        assert status.ok
        best = 0.5 * x @ H @ x + f @ x
        candidates = rng.uniform(-1.0, 1.0, size=(2000, 3))
        feasible = candidates[np.all(candidates @ G.T <= h, axis=1)]
        assert len(feasible) > 0
        values = 0.5 * np.einsum("ij,jk,ik->i", feasible, H, feasible) + feasible @ f
        assert np.all(best <= values + 1e-9)

    def test_equality_constraint(self):
        p = QpProblem(np.eye(2), np.zeros(2), BOX_G[:, :2][[0, 1, 3, 4]], np.ones(4), np.array([[1.0, 1.0]]), np.array([1.0]))
        x, status = solve_qp(p)
        assert status.ok
        assert np.allclose(x, [0.5, 0.5], atol=1e-9)
        assert kkt_residual(p, x, status.multipliers, status.eq_multipliers) <= 1e-7

    def test_singular_hessian_is_regularized(self):
        H = np.diag([1.0, 0.0])
        G = np.vstack([np.eye(2), -np.eye(2)])
        x, status = solve_qp(QpProblem(H, np.array([0.0, -1.0]), G, np.ones(4)))
        assert status.ok
        assert status.regularized
        assert x[1] == pytest.approx(1.0)
        assert x[0] == pytest.approx(0.0, abs=1e-8)

    def test_indefinite_hessian_rejected(self):
        with pytest.raises(RejectedInputError):
            solve_qp(QpProblem(np.diag([1.0, -1.0]), np.zeros(2), np.eye(2), np.ones(2)))

    def test_asymmetric_hessian_rejected(self):
        with pytest.raises(RejectedInputError):
            QpProblem(np.array([[1.0, 1.0], [0.0, 1.0]]), np.zeros(2), np.eye(2), np.ones(2))

    def test_infeasible(self):
        G = np.array([[1.0], [-1.0]])
        x, status = solve_qp(QpProblem(np.eye(1), np.zeros(1), G, np.array([-1.0, -1.0])))
        assert x is None
        assert status.kind == "infeasible"
        assert status.certificate is not None

    def test_warm_start_reuses_previous_solution(self):
        solver = ActiveSetQpSolver()
        a = np.array([2.0, -3.0, 0.5])
        p = QpProblem(np.eye(3), -a, BOX_G, BOX_H)
        x_cold, cold = solver.solve(p)
        x_warm, warm = solver.solve(p)
        assert warm.ok
        assert np.allclose(x_cold, x_warm)
        assert warm.iterations <= cold.iterations

    def test_reset_clears_state(self):
        solver = ActiveSetQpSolver()
        solver.solve(QpProblem(np.eye(3), np.zeros(3), BOX_G, BOX_H))
        solver.reset()
        assert solver._last_x is None
        assert solver._last_active == ()
