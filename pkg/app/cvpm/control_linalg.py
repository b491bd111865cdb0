"""
Control Linalg Module
정상상태 공분산, 터미널 비용 P, Case-2 터미널 가중치 S, LQR 이득 K 를 구하는 밀집 선형대수.
"""

import numpy as np

from app.common.errors import RejectedInputError, SolverError
from app.common.settings import settings

_SYM_TOL = 1e-10


def _square(M, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise RejectedInputError(f"{name} 는 정방행렬이어야 합니다: {M.shape}")
    if not np.all(np.isfinite(M)):
        raise RejectedInputError(f"{name} 에 유한하지 않은 값이 있습니다.")
    return M


def _symmetric(M, name: str) -> np.ndarray:
    M = _square(M, name)
    if np.max(np.abs(M - M.T)) > _SYM_TOL * max(1.0, np.max(np.abs(M))):
        raise RejectedInputError(f"{name} 가 대칭이 아닙니다.")
    return 0.5 * (M + M.T)


def _positive_definite(M, name: str) -> np.ndarray:
    M = _symmetric(M, name)
    if np.min(np.linalg.eigvalsh(M)) <= 0:
        raise RejectedInputError(f"{name} 는 양의 정부호여야 합니다.")
    return M


def spectral_radius(A) -> float:
    A = _square(A, "A")
    try:
        eig = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as e:
        raise SolverError(f"고유값 계산이 수렴하지 않았습니다: {e}") from e
    return float(np.max(np.abs(eig)))


def lyapunov_residual(A, X, Q) -> float:
    return float(np.max(np.abs(A @ X @ A.T - X + Q)))


def solve_dlyap(A, Q) -> np.ndarray:
    """
    A X Aᵀ − X + Q = 0 의 해 X (Kronecker 벡터화).
    Aᵀ X A − X + Q = 0 은 A 대신 Aᵀ 를 넘겨 푼다.
    """
    A = _square(A, "A")
    Q = _symmetric(Q, "Q")
    if A.shape != Q.shape:
        raise RejectedInputError(f"A {A.shape} 와 Q {Q.shape} 차원이 다릅니다.")
    rho = spectral_radius(A)
    if rho >= 1.0:
        raise RejectedInputError(f"ρ(A) = {rho:.6f} ≥ 1 이면 이산 Lyapunov 해가 없습니다.")

    n = A.shape[0]
    lhs = np.eye(n * n) - np.kron(A, A)
    X = np.linalg.solve(lhs, Q.reshape(-1)).reshape(n, n)
    X = 0.5 * (X + X.T)

    residual = lyapunov_residual(A, X, Q)
    if residual > 1e-10 * max(1.0, np.max(np.abs(X))):
        raise SolverError(f"Lyapunov 잔차 {residual:.3e} 가 허용치를 넘었습니다.")
    return X


def dare_residual(A, B, Q, R, P) -> float:
    BtP = B.T @ P
    rhs = A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A) + Q
    return float(np.max(np.abs(P - rhs)))


def solve_dare(A, B, Q, R, max_iter: int | None = None) -> np.ndarray:
    """
    P = AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q 를 structured doubling 으로 푼다.

    A_{k+1} = A_k (I + G_k H_k)⁻¹ A_k
    G_{k+1} = G_k + A_k (I + G_k H_k)⁻¹ G_k A_kᵀ
    H_{k+1} = H_k + A_kᵀ H_k (I + G_k H_k)⁻¹ A_k,   H_k → P
    """
    A = _square(A, "A")
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    Q = _positive_definite(Q, "Q")
    R = _positive_definite(np.atleast_2d(R), "R")
    if Q.shape != (n, n) or R.shape[0] != B.shape[1]:
        raise RejectedInputError("A, B, Q, R 차원이 맞지 않습니다.")
    max_iter = max_iter or settings.dare_max_iter

    Ak = A.copy()
    Gk = B @ np.linalg.solve(R, B.T)
    Hk = Q.copy()
    I = np.eye(n)
    for _ in range(max_iter):
        W = I + Gk @ Hk
        W_inv_A = np.linalg.solve(W, Ak)
        W_inv_G = np.linalg.solve(W, Gk)
        H_next = Hk + Ak.T @ Hk @ W_inv_A
        G_next = Gk + Ak @ W_inv_G @ Ak.T
        A_next = Ak @ W_inv_A
        H_next = 0.5 * (H_next + H_next.T)
        G_next = 0.5 * (G_next + G_next.T)
        done = np.max(np.abs(H_next - Hk)) <= 1e-14 * max(1.0, np.max(np.abs(H_next)))
        Ak, Gk, Hk = A_next, G_next, H_next
        if done:
            break
    else:
        raise SolverError(f"Riccati doubling 이 {max_iter}회 안에 수렴하지 않았습니다.")

    P = Hk
    residual = dare_residual(A, B, Q, R, P)
    if residual > 1e-8 * max(1.0, np.max(np.abs(P))):
        raise SolverError(f"Riccati 잔차 {residual:.3e} 가 허용치를 넘었습니다.")
    return P


def lqr_gain(A, B, Q, R) -> np.ndarray:
    """K = (R + BᵀPB)⁻¹BᵀPA, u = −K x. 폐루프 ρ(A − BK) < 1 을 확인한다."""
    A = _square(A, "A")
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = solve_dare(A, B, Q, R)
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    rho = spectral_radius(A - B @ K)
    if rho >= 1.0:
        raise SolverError(f"LQR 폐루프가 안정하지 않습니다: ρ(A − BK) = {rho:.6f}")
    return K


def steady_state_covariance(A, G, sigma_w) -> np.ndarray:
    """Σ_x = A Σ_x Aᵀ + G Σ_w Gᵀ"""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    return solve_dlyap(A, G @ np.asarray(sigma_w, dtype=float) @ G.T)


def terminal_precision(A, B, K, sigma_x) -> np.ndarray:
    """S = (A − BK)ᵀ S (A − BK) + Σ_x⁻¹ (Case-2 비용의 마지막 블록)"""
    A = _square(A, "A")
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    closed = A - B @ np.atleast_2d(K)
    return solve_dlyap(closed.T, np.linalg.inv(_positive_definite(sigma_x, "Σ_x")))
