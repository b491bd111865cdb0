"""
Optimizers Module
집합 연산(공집합 판정, 지지함수)과 두 CVPM 케이스를 받치는 LP / 볼록 QP 솔버.

- LP: scipy HiGHS (dual simplex) 를 감싸고, 실패 시 상태를 명시적으로 돌려준다.
  불가능(infeasible)이면 Farkas 증명서 y ≥ 0, Gᵀy = 0, hᵀy < 0 을 함께 만든다.
- QP: 밀집 primal active-set. 이전 MPC 스텝의 해/활성집합으로 warm start 가능.
"""

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.optimize import linprog

from app.common.errors import RejectedInputError
from app.common.settings import settings

StatusKind = Literal["optimal", "infeasible", "unbounded", "numerical-failure"]


@dataclass(frozen=True)
class LpProblem:
    """min cᵀx  s.t.  G x ≤ h  (x 는 자유 변수)"""

    c: np.ndarray
    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        G = np.asarray(self.G, dtype=float).reshape(-1, c.size)
        h = np.asarray(self.h, dtype=float).ravel()
        if G.shape[0] != h.size:
            raise RejectedInputError(f"LP 행 수 불일치: G {G.shape}, h {h.shape}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(G)) and np.all(np.isfinite(h))):
            raise RejectedInputError("LP 데이터에 유한하지 않은 값이 있습니다.")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)


@dataclass(frozen=True)
class QpProblem:
    """min ½xᵀHx + fᵀx  s.t.  G x ≤ h,  A_eq x = b_eq"""

    H: np.ndarray
    f: np.ndarray
    G: np.ndarray
    h: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = H.shape[0]
        if H.shape != (n, n):
            raise RejectedInputError(f"H 는 정방행렬이어야 합니다: {H.shape}")
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(H), initial=0.0)):
            raise RejectedInputError("H 가 대칭이 아닙니다.")
        H = 0.5 * (H + H.T)
        f = np.asarray(self.f, dtype=float).ravel()
        G = np.asarray(self.G, dtype=float).reshape(-1, n)
        h = np.asarray(self.h, dtype=float).ravel()
        if f.size != n or G.shape[0] != h.size:
            raise RejectedInputError("QP 데이터 차원이 맞지 않습니다.")
        if self.A_eq is None:
            A_eq, b_eq = np.zeros((0, n)), np.zeros(0)
        else:
            A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
            b_eq = np.asarray(self.b_eq, dtype=float).ravel()
            if A_eq.shape[0] != b_eq.size:
                raise RejectedInputError("등식 제약 차원이 맞지 않습니다.")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "A_eq", A_eq)
        object.__setattr__(self, "b_eq", b_eq)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.f @ x)


@dataclass(frozen=True)
class SolveStatus:
    kind: StatusKind
    iterations: int = 0
    certificate: np.ndarray | None = None  # Farkas ray (infeasible)
    multipliers: np.ndarray | None = None  # 부등식 KKT 승수 (≥ 0)
    eq_multipliers: np.ndarray | None = None
    kkt_residual: float | None = None
    regularized: bool = False
    active_set: tuple[int, ...] = ()
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.kind == "optimal"


# ---------------------------------------------------------------------------
# LP
# ---------------------------------------------------------------------------

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-9,
    "dual_feasibility_tolerance": 1e-9,
}


def farkas_certificate(G: np.ndarray, h: np.ndarray) -> np.ndarray | None:
    """{x : Gx ≤ h} 가 공집합임을 보이는 y (y ≥ 0, Gᵀy = 0, hᵀy = -1). 없으면 None."""
    m, n = G.shape
    if m == 0:
        return None
    A_eq = np.vstack([G.T, h[None, :]])
    b_eq = np.concatenate([np.zeros(n), [-1.0]])
    res = linprog(
        np.ones(m),
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs",
        options=_HIGHS_OPTIONS,
    )
    if res.status != 0:
        return None
    return np.asarray(res.x)


def solve_lp(p: LpProblem) -> tuple[np.ndarray | None, SolveStatus]:
    """
    LP 를 풀고 (x, status) 를 반환한다.

    optimal 이면 multipliers 에 부등식 승수 λ ≥ 0 (c + Gᵀλ = 0),
    infeasible 이면 certificate 에 Farkas 증명서가 담긴다.
    """
    n = p.c.size
    if p.G.shape[0] == 0:
        if np.any(p.c != 0):
            return None, SolveStatus("unbounded", message="제약이 없는 LP")
        return np.zeros(n), SolveStatus("optimal", multipliers=np.zeros(0))

    res = linprog(
        p.c,
        A_ub=p.G,
        b_ub=p.h,
        bounds=(None, None),
        method="highs",
        options=_HIGHS_OPTIONS,
    )
    iterations = int(getattr(res, "nit", 0) or 0)

    if res.status == 0:
        lam = -np.asarray(res.ineqlin.marginals)
        return np.asarray(res.x), SolveStatus(
            "optimal", iterations=iterations, multipliers=np.maximum(lam, 0.0)
        )
    if res.status == 2:
        return None, SolveStatus(
            "infeasible",
            iterations=iterations,
            certificate=farkas_certificate(p.G, p.h),
            message=res.message,
        )
    if res.status == 3:
        return None, SolveStatus("unbounded", iterations=iterations, message=res.message)
    return None, SolveStatus("numerical-failure", iterations=iterations, message=res.message)


# ---------------------------------------------------------------------------
# QP
# ---------------------------------------------------------------------------


def kkt_residual(
    p: QpProblem,
    x: np.ndarray,
    multipliers: np.ndarray,
    eq_multipliers: np.ndarray | None = None,
) -> float:
    """정상성, 원문제 위반, 상보여유성, 쌍대 실행가능성 중 최댓값."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(multipliers, dtype=float)
    nu = np.zeros(p.A_eq.shape[0]) if eq_multipliers is None else np.asarray(eq_multipliers)

    stationarity = p.H @ x + p.f + p.G.T @ lam + p.A_eq.T @ nu
    slack = p.G @ x - p.h
    parts = [
        np.max(np.abs(stationarity), initial=0.0),
        np.max(slack, initial=0.0),
        np.max(np.abs(p.A_eq @ x - p.b_eq), initial=0.0),
        np.max(np.abs(lam * slack), initial=0.0),
        np.max(-lam, initial=0.0),
    ]
    return float(max(parts))


def _regularize(p: QpProblem, ridge_eps: float) -> tuple[QpProblem, bool]:
    """PSD 검사 후, 영공간 방향에만 ε 릿지를 더한 문제를 돌려준다."""
    eigvals, eigvecs = np.linalg.eigh(p.H)
    scale = max(1.0, float(np.max(np.abs(eigvals), initial=0.0)))
    if eigvals.size and eigvals[0] < -1e-9 * scale:
        raise RejectedInputError(f"H 가 PSD 가 아닙니다 (최소 고유값 {eigvals[0]:.3e}).")
    null = eigvals <= ridge_eps * scale
    if not np.any(null):
        return p, False
    V = eigvecs[:, null]
    H_reg = p.H + ridge_eps * scale * (V @ V.T)
    return QpProblem(0.5 * (H_reg + H_reg.T), p.f, p.G, p.h, p.A_eq, p.b_eq), True


def _phase_one(p: QpProblem) -> tuple[np.ndarray | None, SolveStatus | None]:
    """초기 실행가능점을 LP 로 찾는다."""
    n = p.n
    if p.A_eq.shape[0]:
        G = np.vstack([p.G, p.A_eq, -p.A_eq])
        h = np.concatenate([p.h, p.b_eq, -p.b_eq])
    else:
        G, h = p.G, p.h
    x, status = solve_lp(LpProblem(np.zeros(n), G, h))
    if status.ok:
        return x, None
    return None, status


class ActiveSetQpSolver:
    """
    밀집 primal active-set QP 솔버.

    한 인스턴스는 warm start 상태(직전 해, 활성집합)를 가지므로 한 소유자만 사용한다.
    상태 없는 호출은 solve_qp() 를 쓴다.
    """

    def __init__(
        self,
        max_iter: int | None = None,
        ridge_eps: float | None = None,
        tol: float | None = None,
    ):
        self.max_iter = max_iter or settings.qp_max_iter
        self.ridge_eps = settings.ridge_eps if ridge_eps is None else ridge_eps
        self.tol = settings.kkt_tol if tol is None else tol
        self._last_x: np.ndarray | None = None
        self._last_active: tuple[int, ...] = ()

    def reset(self):
        self._last_x = None
        self._last_active = ()

    def _warm_point(self, p: QpProblem, x0: np.ndarray | None) -> np.ndarray | None:
        for candidate in (x0, self._last_x):
            if candidate is None or candidate.size != p.n:
                continue
            feasible = np.all(p.G @ candidate <= p.h + self.tol)
            if p.A_eq.shape[0]:
                feasible = feasible and np.all(np.abs(p.A_eq @ candidate - p.b_eq) <= self.tol)
            if feasible:
                return np.array(candidate, dtype=float)
        return None

    def _initial_working_set(self, p: QpProblem, x: np.ndarray) -> list[int]:
        slack = p.h - p.G @ x
        preferred = [i for i in self._last_active if i < slack.size]
        candidates = preferred + [i for i in np.argsort(slack) if i not in preferred]
        working: list[int] = []
        rows = p.A_eq.copy()
        for i in candidates:
            if slack[i] > self.tol or rows.shape[0] >= p.n:
                continue
            stacked = np.vstack([rows, p.G[i]])
            if np.linalg.matrix_rank(stacked) == stacked.shape[0]:
                working.append(int(i))
                rows = stacked
        return working

    def solve(self, p: QpProblem, x0: np.ndarray | None = None) -> tuple[np.ndarray | None, SolveStatus]:
        problem, regularized = _regularize(p, self.ridge_eps)
        n, k = problem.n, problem.A_eq.shape[0]

        x = self._warm_point(problem, x0)
        if x is None:
            x, failure = _phase_one(problem)
            if x is None:
                return None, SolveStatus(
                    failure.kind,
                    certificate=failure.certificate,
                    regularized=regularized,
                    message="실행가능점이 없습니다 (phase-1 LP).",
                )
        working = self._initial_working_set(problem, x)

        H, G = problem.H, problem.G
        mu = np.zeros(k + len(working))
        iterations = 0
        converged = False
        full_step = False

        while iterations < self.max_iter:
            iterations += 1
            A_w = np.vstack([problem.A_eq, G[working]]) if working else problem.A_eq
            m_w = A_w.shape[0]
            grad = H @ x + problem.f

            kkt = np.zeros((n + m_w, n + m_w))
            kkt[:n, :n] = H
            kkt[:n, n:] = A_w.T
            kkt[n:, :n] = A_w
            rhs = np.concatenate([-grad, np.zeros(m_w)])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            step, mu = sol[:n], sol[n:]

            # 직전 스텝이 막힘 없이 끝났으면 이미 EQP 최소점
            if full_step or np.max(np.abs(step), initial=0.0) <= 1e-10 * max(1.0, np.max(np.abs(x), initial=0.0)):
                full_step = False
                lam_w = mu[k:]
                if lam_w.size == 0 or np.min(lam_w) >= -1e-10 * max(1.0, np.max(np.abs(grad))):
                    converged = True
                    break
                # 가장 음수인 승수 제거 (동률이면 작은 인덱스)
                drop = int(np.argmin(lam_w))
                working.pop(drop)
                continue

            alpha, blocking = 1.0, None
            Gp = G @ step
            step_norm = np.linalg.norm(step)
            for i in range(G.shape[0]):
                if i in working:
                    continue
                if Gp[i] <= 1e-12 * max(1.0, np.linalg.norm(G[i]) * step_norm):
                    continue
                ratio = max(0.0, (problem.h[i] - G[i] @ x) / Gp[i])
                if ratio < alpha:
                    alpha, blocking = ratio, i
            x = x + alpha * step
            if blocking is not None:
                working.append(blocking)
            full_step = blocking is None

        lam = np.zeros(G.shape[0])
        if working and mu.size == k + len(working):
            lam[working] = np.maximum(mu[k:], 0.0)
        nu = mu[:k] if mu.size >= k else np.zeros(k)
        residual = kkt_residual(problem, x, lam, nu)

        self._last_x = x.copy()
        self._last_active = tuple(working)

        if converged and residual <= self.tol * max(1.0, np.max(np.abs(problem.f), initial=0.0)):
            kind: StatusKind = "optimal"
            message = ""
        else:
            kind = "numerical-failure"
            message = "반복 예산 초과" if not converged else f"KKT 잔차 {residual:.3e}"
        return x, SolveStatus(
            kind,
            iterations=iterations,
            multipliers=lam,
            eq_multipliers=nu,
            kkt_residual=residual,
            regularized=regularized,
            active_set=tuple(working),
            message=message,
        )


def solve_qp(p: QpProblem, x0: np.ndarray | None = None) -> tuple[np.ndarray | None, SolveStatus]:
    """상태 없는 QP 진입점 (스레드 안전)."""
    return ActiveSetQpSolver().solve(p, x0=x0)
