"""
Lifting Module
예측 구간 N 에 대한 적층 예측 행렬 (Ā, B̄, Ḡ) 과 블록 대각 역공분산.

    X = Ā x + B̄ U + Ḡ W,   X = [x₁; …; x_N]
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from app.common.errors import RejectedInputError


@dataclass(frozen=True, eq=False)
class LiftedSystem:
    A_lift: np.ndarray  # (N·n_x × n_x), 블록 k = A^{k+1}
    B_lift: np.ndarray  # (N·n_x × N·n_u), 블록 (k, j) = A^{k−j} B, j ≤ k
    G_lift: np.ndarray  # (N·n_x × N·n_w)
    N: int

    @property
    def n_x(self) -> int:
        return self.A_lift.shape[1]

    @property
    def n_u(self) -> int:
        return self.B_lift.shape[1] // self.N

    @property
    def n_w(self) -> int:
        return self.G_lift.shape[1] // self.N


@dataclass(frozen=True, eq=False)
class BlockCovariance:
    inverse_blocks: tuple[np.ndarray, ...]
    terminal_flag: bool

    def matrix(self) -> np.ndarray:
        return block_diag(*self.inverse_blocks)

    @property
    def N(self) -> int:
        return len(self.inverse_blocks)


def _toeplitz_blocks(powers: list[np.ndarray], M: np.ndarray, N: int) -> np.ndarray:
    n_x, n_c = M.shape
    out = np.zeros((N * n_x, N * n_c))
    for k in range(N):
        for j in range(k + 1):
            out[k * n_x : (k + 1) * n_x, j * n_c : (j + 1) * n_c] = powers[k - j] @ M
    return out


def build_lifted(A, B, G, N: int) -> LiftedSystem:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n_x = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n_x, -1)
    G = np.asarray(G, dtype=float).reshape(n_x, -1)
    if A.shape != (n_x, n_x):
        raise RejectedInputError(f"A 는 정방행렬이어야 합니다: {A.shape}")
    if N < 1:
        raise RejectedInputError(f"예측 구간 N 은 1 이상이어야 합니다: {N}")

    powers = [np.eye(n_x)]
    for _ in range(N):
        powers.append(powers[-1] @ A)
    A_lift = np.vstack(powers[1:])
    return LiftedSystem(
        A_lift=A_lift,
        B_lift=_toeplitz_blocks(powers, B, N),
        G_lift=_toeplitz_blocks(powers, G, N),
        N=N,
    )


def predict_mean(L: LiftedSystem, x, U) -> np.ndarray:
    """외란 평균 0 에서의 상태 궤적 X̄ = Ā x + B̄ U"""
    x = np.asarray(x, dtype=float).ravel()
    U = np.asarray(U, dtype=float).ravel()
    if x.size != L.n_x or U.size != L.B_lift.shape[1]:
        raise RejectedInputError(
            f"형상 불일치: x {x.size} (기대 {L.n_x}), U {U.size} (기대 {L.B_lift.shape[1]})"
        )
    return L.A_lift @ x + L.B_lift @ U


def block_cov_inverse(sigma_x, S, N: int, adapted: bool) -> BlockCovariance:
    """
    diag(Σ_x⁻¹, …, Σ_x⁻¹). adapted 이면 마지막 블록을 S 로 바꾼다.
    """
    sigma_x = np.atleast_2d(np.asarray(sigma_x, dtype=float))
    try:
        eig = np.linalg.eigvalsh(0.5 * (sigma_x + sigma_x.T))
    except np.linalg.LinAlgError as e:
        raise RejectedInputError(f"Σ_x 고유값 계산 실패: {e}") from e
    if eig[0] <= 1e-14 * max(1.0, eig[-1]):
        raise RejectedInputError("Σ_x 가 특이합니다.")
    inv = np.linalg.inv(sigma_x)
    inv = 0.5 * (inv + inv.T)
    blocks = [inv] * N
    if adapted:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        if S.shape != sigma_x.shape or np.min(np.linalg.eigvalsh(0.5 * (S + S.T))) <= 0:
            raise RejectedInputError("S 는 Σ_x 와 같은 크기의 양의 정부호 행렬이어야 합니다.")
        blocks[-1] = 0.5 * (S + S.T)
    return BlockCovariance(tuple(blocks), terminal_flag=adapted)
