import numpy as np
import pytest
from scipy.linalg import solve_discrete_are, solve_discrete_lyapunov

from app.common.errors import RejectedInputError
from app.cvpm.control_linalg import (
    dare_residual,
    lqr_gain,
    lyapunov_residual,
    solve_dare,
    solve_dlyap,
    spectral_radius,
    steady_state_covariance,
    terminal_precision,
)

A = np.array([[0.99, -0.02], [0.21, 0.92]])
B = np.array([[0.30], [0.06]])
G = np.array([[0.02, 0.00], [0.01, 0.19]])
Q = np.diag([1.0, 5.0])
R = np.array([[1.0]])
SIGMA_W = 0.2 * np.eye(2)


def test_dcdc_matrix_is_schur_stable():
    assert spectral_radius(A) < 1.0


def test_dare_matches_scipy():
    P = solve_dare(A, B, Q, R)
    reference = solve_discrete_are(A, B, Q, R)
    assert np.allclose(P, reference, rtol=1e-8, atol=1e-10)
    assert dare_residual(A, B, Q, R, P) <= 1e-8 * np.max(np.abs(P))
    assert np.allclose(P, P.T)


def test_dare_rejects_indefinite_weight():
    with pytest.raises(RejectedInputError):
        solve_dare(A, B, np.diag([1.0, -1.0]), R)


def test_lqr_gain_stabilizes():
    K = lqr_gain(A, B, Q, R)
    assert K.shape == (1, 2)
    assert spectral_radius(A - B @ K) < 1.0


def test_dlyap_matches_scipy():
    W = G @ SIGMA_W @ G.T
    X = solve_dlyap(A, W)
    assert np.allclose(X, solve_discrete_lyapunov(A, W), rtol=1e-9, atol=1e-12)
    assert lyapunov_residual(A, X, W) <= 1e-12


def test_dlyap_rejects_unstable_matrix():
    with pytest.raises(RejectedInputError):
        solve_dlyap(np.diag([1.0, 0.5]), np.eye(2))


def test_steady_state_covariance_is_fixed_point():
    sigma_x = steady_state_covariance(A, G, SIGMA_W)
    assert np.allclose(sigma_x, A @ sigma_x @ A.T + G @ SIGMA_W @ G.T, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(sigma_x)) > 0


def test_terminal_precision_is_fixed_point():
    K = lqr_gain(A, B, Q, R)
    sigma_x = steady_state_covariance(A, G, SIGMA_W)
    S = terminal_precision(A, B, K, sigma_x)
    closed = A - B @ K
    assert np.allclose(S, closed.T @ S @ closed + np.linalg.inv(sigma_x), rtol=1e-9)
    # S ⪰ Σ_x⁻¹
    assert np.min(np.linalg.eigvalsh(S - np.linalg.inv(sigma_x))) >= -1e-9


def test_scalar_dare_closed_form():
    # p² = 0.25 p + 1
    p = solve_dare(np.array([[0.5]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]))
    expected = (0.25 + np.sqrt(0.25**2 + 4.0)) / 2.0
    assert p[0, 0] == pytest.approx(expected, rel=1e-10)
    K = lqr_gain(np.array([[0.5]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]))
    assert K[0, 0] == pytest.approx(0.5 * expected / (1.0 + expected), rel=1e-10)


def test_dare_with_zero_dynamics_returns_state_weight():
    P = solve_dare(np.zeros((2, 2)), B, Q, R)
    assert np.allclose(P, Q, atol=1e-12)
    assert np.allclose(lqr_gain(np.zeros((2, 2)), B, Q, R), 0.0, atol=1e-12)


def test_dlyap_of_scaled_identity():
    assert np.allclose(solve_dlyap(0.5 * np.eye(2), np.eye(2)), np.eye(2) * 4.0 / 3.0, atol=1e-12)


def test_spectral_radius_of_trivial_matrices():
    assert spectral_radius(np.eye(3)) == pytest.approx(1.0)
    assert spectral_radius(np.zeros((2, 2))) == 0.0
