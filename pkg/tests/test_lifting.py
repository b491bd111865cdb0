import numpy as np
import pytest

from app.common.errors import RejectedInputError
from app.cvpm.lifting import block_cov_inverse, build_lifted, predict_mean

A = np.array([[0.99, -0.02], [0.21, 0.92]])
B = np.array([[0.30], [0.06]])
G = np.array([[0.02, 0.00], [0.01, 0.19]])


def _simulate(x, U, W, N):
    out = []
    for k in range(N):
        x = A @ x + B @ U[k : k + 1] + G @ W[2 * k : 2 * k + 2]
        out.append(x)
    return np.concatenate(out)


def test_lifted_shapes():
    L = build_lifted(A, B, G, 10)
    assert L.A_lift.shape == (20, 2)
    assert L.B_lift.shape == (20, 10)
    assert L.G_lift.shape == (20, 20)
    assert (L.n_x, L.n_u, L.n_w) == (2, 1, 2)


def test_lifted_prediction_matches_recursion(rng):
    N = 6
    L = build_lifted(A, B, G, N)
    x0 = rng.normal(size=2)
    U = rng.normal(size=N)
    W = rng.normal(size=2 * N)
    stacked = L.A_lift @ x0 + L.B_lift @ U + L.G_lift @ W
    assert np.allclose(stacked, _simulate(x0, U, W, N), atol=1e-12)
    assert np.allclose(predict_mean(L, x0, U), _simulate(x0, U, np.zeros(2 * N), N), atol=1e-12)


def test_lifted_input_matrix_is_block_lower_triangular():
    L = build_lifted(A, B, G, 4)
    assert np.allclose(L.B_lift[0:2, 1:], 0.0)
    assert np.allclose(L.B_lift[6:8, 0:1], np.linalg.matrix_power(A, 3) @ B)


def test_predict_mean_shape_mismatch():
    L = build_lifted(A, B, G, 3)
    with pytest.raises(RejectedInputError):
        predict_mean(L, np.zeros(2), np.zeros(4))


def test_horizon_must_be_positive():
    with pytest.raises(RejectedInputError):
        build_lifted(A, B, G, 0)


def test_block_covariance_terminal_block():
    sigma_x = np.array([[2.0, 0.3], [0.3, 1.0]])
    S = 3.0 * np.eye(2)
    plain = block_cov_inverse(sigma_x, S, 4, adapted=False)
    adapted = block_cov_inverse(sigma_x, S, 4, adapted=True)
    assert plain.N == adapted.N == 4
    M = adapted.matrix()
    assert M.shape == (8, 8)
    assert np.allclose(M[:2, :2], np.linalg.inv(sigma_x))
    assert np.allclose(M[-2:, -2:], S)
    assert np.allclose(plain.matrix()[-2:, -2:], np.linalg.inv(sigma_x))
    assert adapted.terminal_flag and not plain.terminal_flag


def test_block_covariance_rejects_singular_sigma():
    with pytest.raises(RejectedInputError):
        block_cov_inverse(np.array([[1.0, 1.0], [1.0, 1.0]]), np.eye(2), 2, adapted=False)
