"""
Controller Module
CVPM-MPC 제어기: 가정 검증, 오프라인 집합 계산(X_f, 튜브, X_C1), 케이스 판정,
Case 1 (안전 QP) / Case 2 (위반 확률 최소화 QP), 스텝 결과.

좌표 규약
- 공개 함수의 상태 x, 입력 u 는 절대 좌표다.
- 내부 계산과 CvpmProblem 의 X_P_dev, U_dev, X_f, tube, X_C1 은 편차 좌표
  (Δx = x − x_ref, Δu = u − u_ref) 이다. 내보낼 때는 sets_absolute() 를 쓴다.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Literal

import numpy as np

from app.common.errors import (
    AssumptionError,
    ConsistencyError,
    NoTerminalSetError,
    RejectedInputError,
    ResourceLimitError,
    SolverError,
)
from app.common.logger import cvpm_logger
from app.common.settings import settings
from app.cvpm import geometry as geo
from app.cvpm.control_linalg import (
    dare_residual,
    lqr_gain,
    solve_dare,
    spectral_radius,
    steady_state_covariance,
    terminal_precision,
)
from app.cvpm.geometry import Polytope
from app.cvpm.lifting import BlockCovariance, LiftedSystem, block_cov_inverse, build_lifted, predict_mean
from app.cvpm.optimizers import ActiveSetQpSolver, QpProblem, SolveStatus

# ---------------------------------------------------------------------------
# 입력 타입
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MpcConfig:
    N: int
    Q: np.ndarray
    R: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    dt: float = 0.1  # 메타데이터

    def __post_init__(self):
        if int(self.N) < 1:
            raise RejectedInputError(f"예측 구간 N 은 1 이상이어야 합니다: {self.N}")
        x_ref = np.asarray(self.x_ref, dtype=float).ravel()
        u_ref = np.asarray(self.u_ref, dtype=float).ravel()
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if Q.shape != (x_ref.size, x_ref.size) or R.shape != (u_ref.size, u_ref.size):
            raise RejectedInputError("Q, R 크기가 x_ref, u_ref 와 맞지 않습니다.")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "x_ref", x_ref)
        object.__setattr__(self, "u_ref", u_ref)

    @property
    def n_x(self) -> int:
        return self.x_ref.size

    @property
    def n_u(self) -> int:
        return self.u_ref.size


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """x⁺ = A x + B u + G w,  w ~ N(0, Σ_w) 를 W 로 절단."""

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    sigma_w: np.ndarray
    W: Polytope

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise RejectedInputError(f"A 는 정방행렬이어야 합니다: {A.shape}")
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        if G.shape != (n, n) or abs(np.linalg.det(G)) < 1e-14:
            raise RejectedInputError("G 는 가역인 n_x × n_x 행렬이어야 합니다.")
        sigma_w = np.atleast_2d(np.asarray(self.sigma_w, dtype=float))
        if sigma_w.shape != (n, n):
            raise RejectedInputError(f"Σ_w 크기가 맞지 않습니다: {sigma_w.shape}")
        if self.W.dim != n:
            raise RejectedInputError(f"W 차원({self.W.dim})이 n_w({n})와 다릅니다.")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "sigma_w", sigma_w)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class ProblemInputs:
    system: LinearSystem
    config: MpcConfig
    X_P: Polytope  # 절대 좌표
    U_set: Polytope  # 절대 좌표
    X_f_pinned: Polytope | None = None  # 편차 좌표, 고정 터미널 집합

    def __post_init__(self):
        if self.X_P.dim != self.system.n_x or self.U_set.dim != self.system.n_u:
            raise RejectedInputError("X_P / U 차원이 시스템과 맞지 않습니다.")
        if self.config.n_x != self.system.n_x or self.config.n_u != self.system.n_u:
            raise RejectedInputError("MpcConfig 기준값 차원이 시스템과 맞지 않습니다.")


# ---------------------------------------------------------------------------
# 가정 리포트
# ---------------------------------------------------------------------------

CheckStatus = Literal["pass", "fail", "skipped"]


@dataclass
class AssumptionCheck:
    id: int
    name: str
    status: CheckStatus
    evidence: dict = field(default_factory=dict)


@dataclass
class AssumptionReport:
    checks: list[AssumptionCheck] = field(default_factory=list)

    def add(self, id: int, name: str, passed: bool | None, **evidence):
        status: CheckStatus = "skipped" if passed is None else ("pass" if passed else "fail")
        self.checks.append(AssumptionCheck(id, name, status, evidence))

    def get(self, id: int) -> AssumptionCheck | None:
        return next((c for c in self.checks if c.id == id), None)

    @property
    def failed(self) -> list[int]:
        return [c.id for c in self.checks if c.status == "fail"]

    @property
    def passed(self) -> bool:
        return not self.failed

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "failed": self.failed,
            "checks": [
                {"id": c.id, "name": c.name, "status": c.status, "evidence": _jsonable(c.evidence)}
                for c in self.checks
            ],
        }


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


# ---------------------------------------------------------------------------
# 문제 / 결과 타입
# ---------------------------------------------------------------------------


class Case(str, Enum):
    SAFE = "Safe"
    PROBABILISTIC = "Probabilistic"


@dataclass(frozen=True, eq=False)
class CvpmProblem:
    system: LinearSystem
    config: MpcConfig
    X_P: Polytope
    U_set: Polytope
    X_P_dev: Polytope
    U_dev: Polytope
    U_stack: Polytope  # U_dev^N
    lifted: LiftedSystem
    X_f: Polytope
    tube: Polytope | None  # (X_P^{N−1} × X_f) ⊖ Ḡ∘W^N, Assumption 3 실패 시 None
    X_C1: Polytope | None
    X_C1_volume: float
    P: np.ndarray
    sigma_x: np.ndarray
    K: np.ndarray
    S: np.ndarray
    cov_plain: BlockCovariance
    cov_adapted: BlockCovariance
    report: AssumptionReport
    terminal_pinned: bool = False
    terminal_iterations: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.config.N

    def to_dev_state(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.system.n_x:
            raise RejectedInputError(f"상태 차원 불일치: {x.size} (기대 {self.system.n_x})")
        return x - self.config.x_ref

    def stacked_x_ref(self) -> np.ndarray:
        return np.tile(self.config.x_ref, self.N)

    def stacked_u_ref(self) -> np.ndarray:
        return np.tile(self.config.u_ref, self.N)

    def sets_absolute(self) -> dict[str, Polytope | None]:
        x_ref = self.config.x_ref
        return {
            "X_P": self.X_P,
            "X_f": geo.translate(self.X_f, x_ref),
            "X_C1": None if self.X_C1 is None else geo.translate(self.X_C1, x_ref),
        }


@dataclass(frozen=True, eq=False)
class StepOutcome:
    case: Case
    u_applied: np.ndarray
    U_star: np.ndarray
    X_bar: np.ndarray
    xi_star: np.ndarray | None
    p_violation: float
    objective: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "case": self.case.value,
            "u_applied": self.u_applied.tolist(),
            "U_star": self.U_star.tolist(),
            "X_bar": self.X_bar.tolist(),
            "xi_star": None if self.xi_star is None else self.xi_star.tolist(),
            "p_violation": self.p_violation,
            "objective": self.objective,
            "diagnostics": _jsonable(self.diagnostics),
        }


class CvpmWorkspace:
    """한 제어 루프 전용 warm-start 상태. 스레드 간 공유하지 않는다."""

    def __init__(self):
        self.case1 = ActiveSetQpSolver()
        self.case2 = ActiveSetQpSolver()
        self.last_dU: np.ndarray | None = None

    def shifted_hint(self, n_u: int) -> np.ndarray | None:
        if self.last_dU is None:
            return None
        return np.concatenate([self.last_dU[n_u:], self.last_dU[-n_u:]])


# ---------------------------------------------------------------------------
# 집합 계산
# ---------------------------------------------------------------------------


def _deviation_sets(config: MpcConfig, X_P: Polytope, U_set: Polytope) -> tuple[Polytope, Polytope]:
    return geo.translate(X_P, -config.x_ref), geo.translate(U_set, -config.u_ref)


def _disturbance_image(system: LinearSystem, power: int) -> Polytope:
    """A^power G ∘ W"""
    M = np.linalg.matrix_power(system.A, power) @ system.G
    return geo.affine_image(M, system.W)


def _propagated_disturbance(system: LinearSystem, N: int) -> Polytope:
    """S_N = ⊕_{j<N} A^j G ∘ W (명시적, dim ≤ 3)"""
    total = _disturbance_image(system, 0)
    for j in range(1, N):
        total = geo.remove_redundancy(geo.minkowski_sum(total, _disturbance_image(system, j)))
    return total


def _robust_predecessor(Omega: Polytope, A: np.ndarray, D: Polytope, neg_BU: Polytope) -> Polytope | None:
    """Pre_D(Ω) = ((Ω ⊖ D) ⊕ (−B)∘U) ∘ A. 공집합이면 None."""
    shrunk = geo.pontryagin_diff(Omega, D)
    if geo.is_empty(shrunk):
        return None
    grown = geo.minkowski_sum(geo.remove_redundancy(shrunk), neg_BU)
    return geo.affine_preimage(grown, A)


def compute_terminal_set(
    system: LinearSystem,
    config: MpcConfig,
    X_P: Polytope,
    U_set: Polytope,
) -> Polytope:
    """
    강건 제어 불변 터미널 집합 X_f (편차 좌표).

    Ω₀ = X_P,
    Ω_{k+1} = X_P ∩ Pre_D(Ω_k) ∩ (Pre_D(Ω_k ⊖ S_N) ⊕ S_N),   D = A^N G∘W

    를 상호 지지함수 일치(terminal_tol)까지 반복한다. 두 번째 항 때문에 X_f 뿐 아니라
    조여진 터미널 블록 X_f ⊖ S_N 도 D 에 대해 강건 불변이 된다.
    """
    polytope, _ = _terminal_iteration(system, config, X_P, U_set)
    return polytope


def _terminal_iteration(system, config, X_P, U_set) -> tuple[Polytope, int]:
    X_P_dev, U_dev = _deviation_sets(config, X_P, U_set)
    N = config.N
    D = _disturbance_image(system, N)
    S_N = _propagated_disturbance(system, N)
    neg_BU = geo.affine_image(-system.B, U_dev)

    Omega = geo.remove_redundancy(X_P_dev)
    for iteration in range(1, settings.terminal_max_iter + 1):
        pre = _robust_predecessor(Omega, system.A, D, neg_BU)
        inner = geo.pontryagin_diff(Omega, S_N)
        pre_inner = None if pre is None or geo.is_empty(inner) else _robust_predecessor(
            geo.remove_redundancy(inner), system.A, D, neg_BU
        )
        if pre is None or pre_inner is None:
            raise NoTerminalSetError(
                f"터미널 집합 반복 {iteration}회차에서 공집합이 되었습니다.", failed=[6]
            )
        candidate = geo.intersect(geo.intersect(X_P_dev, pre), geo.minkowski_sum(geo.remove_redundancy(pre_inner), S_N))
        if geo.is_empty(candidate):
            raise NoTerminalSetError(
                f"터미널 집합 반복 {iteration}회차에서 공집합이 되었습니다.", failed=[6]
            )
        nxt = geo.remove_redundancy(candidate)
        # 단조 감소이므로 Ω_k ⊆ Ω_{k+1} 만 보면 된다
        if geo.is_subset(Omega, nxt, settings.terminal_tol):
            cvpm_logger.info(f"터미널 집합 수렴: {iteration}회, {nxt.n_constraints}개 면")
            return nxt, iteration
        Omega = nxt
    raise ResourceLimitError(f"터미널 집합 반복이 {settings.terminal_max_iter}회 안에 수렴하지 않았습니다.")


def rci_margin(system: LinearSystem, config: MpcConfig, X_f: Polytope, U_dev: Polytope) -> float:
    """
    A∘X_f ⊕ A^N G∘W ⊆ X_f ⊕ (−B)∘U 의 면별 여유 (≥ 0 이면 성립).
    우변의 각 면 (f, g) 에 대해 g − h(X_f, Aᵀf) − h(A^N G∘W, f).
    """
    D = _disturbance_image(system, config.N)
    rhs = geo.remove_redundancy(geo.minkowski_sum(X_f, geo.affine_image(-system.B, U_dev)))
    lhs = geo.support_many(X_f, rhs.F @ system.A) + geo.support_many(D, rhs.F)
    return float(np.min(rhs.g - lhs))


def tighten_stacked(system: LinearSystem, blocks: list[Polytope]) -> Polytope:
    """
    (block₀ × … × block_{N−1}) ⊖ Ḡ∘W^N.
    블록 k 의 면 f 는 Σ_{i≤k} h(W, (A^i G)ᵀ f) 만큼 조인다.
    """
    N = len(blocks)
    maps = [np.linalg.matrix_power(system.A, i) @ system.G for i in range(N)]
    unique = {id(b): b.normalized() for b in blocks}
    normalized = [unique[id(b)] for b in blocks]
    cache: dict[tuple[int, int], np.ndarray] = {}
    tightened = []
    for k, block in enumerate(normalized):
        shrink = np.zeros(block.n_constraints)
        for i in range(k + 1):
            key = (id(block), i)
            if key not in cache:
                cache[key] = geo.support_many(system.W, block.F @ maps[i])
            shrink += cache[key]
        tightened.append(Polytope(block.F, block.g - shrink, canonical=True))
    return geo.cartesian_product(tightened)


def _case1_set(lifted: LiftedSystem, U_stack: Polytope, tube: Polytope) -> Polytope | None:
    n_x = lifted.n_x
    n_U = U_stack.dim
    top = np.hstack([np.zeros((U_stack.n_constraints, n_x)), U_stack.F])
    bottom = np.hstack([tube.F @ lifted.A_lift, tube.F @ lifted.B_lift])
    joint = Polytope(np.vstack([top, bottom]), np.concatenate([U_stack.g, tube.g]))
    if geo.is_empty(joint):
        return None
    projected = geo.project(joint, list(range(n_x)))
    cvpm_logger.info(f"X_C1 사영 완료: {n_U}개 입력 변수 제거, {projected.n_constraints}개 면")
    return projected


def compute_case1_set(problem: CvpmProblem) -> Polytope | None:
    """X_C1 = {x : ∃U ∈ U^N, Ā x + B̄ U ∈ tube} (편차 좌표). 공집합이면 None."""
    if problem.tube is None:
        return None
    return _case1_set(problem.lifted, problem.U_stack, problem.tube)


# ---------------------------------------------------------------------------
# 가정 검증 / 문제 생성
# ---------------------------------------------------------------------------


def _min_eig(M) -> float:
    M = np.atleast_2d(M)
    if np.max(np.abs(M - M.T)) > 1e-10 * max(1.0, np.max(np.abs(M))):
        return -np.inf
    return float(np.min(np.linalg.eigvalsh(0.5 * (M + M.T))))


def _is_bounded(P: Polytope) -> bool:
    try:
        geo.support_many(P, np.vstack([np.eye(P.dim), -np.eye(P.dim)]))
    except SolverError:
        return False
    return True


def _screen(inputs: ProblemInputs) -> tuple[AssumptionReport, np.ndarray | None]:
    """집합 계산 없이 확인되는 가정 1, 2, 4, 5. Riccati 해 P 를 함께 돌려준다."""
    system, config = inputs.system, inputs.config
    report = AssumptionReport()

    # Assumption 1: 절단 가우시안 외란
    sw_eig = _min_eig(system.sigma_w)
    w_bounded = _is_bounded(system.W)
    w_origin = geo.contains(system.W, np.zeros(system.n_x))
    report.add(
        1,
        "truncated Gaussian disturbance",
        sw_eig > 0 and w_bounded and w_origin,
        sigma_w_min_eig=sw_eig,
        W_bounded=w_bounded,
        zero_in_W=w_origin,
    )

    # Assumption 2: 유계 X_P, 기준점 포함
    xp_bounded = _is_bounded(inputs.X_P)
    ref_inside = geo.contains(inputs.X_P, config.x_ref)
    report.add(
        2,
        "bounded state constraints containing the reference",
        xp_bounded and ref_inside,
        X_P_bounded=xp_bounded,
        x_ref_in_X_P=ref_inside,
        u_ref_in_U=geo.contains(inputs.U_set, config.u_ref),
    )

    # Assumption 4: 안정한 A
    rho = spectral_radius(system.A)
    report.add(4, "Schur-stable system matrix", rho < 1.0, spectral_radius=rho)

    # Assumption 5: Q, R ≻ 0, P 는 DARE 해
    q_eig, r_eig = _min_eig(config.Q), _min_eig(config.R)
    weights_ok = q_eig > 0 and r_eig > 0
    P = None
    residual = None
    if weights_ok:
        try:
            P = solve_dare(system.A, system.B, config.Q, config.R)
            residual = dare_residual(system.A, system.B, config.Q, config.R, P)
        except (SolverError, np.linalg.LinAlgError) as e:
            cvpm_logger.warning(f"Riccati 풀이 실패: {e}")
    report.add(
        5,
        "positive definite weights and Riccati terminal cost",
        weights_ok and P is not None,
        Q_min_eig=q_eig,
        R_min_eig=r_eig,
        dare_residual=residual,
    )
    return report, P


def screen_assumptions(inputs: ProblemInputs) -> AssumptionReport:
    """가정 1, 2, 4, 5 만 빠르게 확인한다 (시나리오 로드 시)."""
    report, _ = _screen(inputs)
    return report


def _assess(inputs: ProblemInputs, strict: bool) -> tuple[AssumptionReport, dict]:
    """가정 1–6 을 확인하고 이후 생성에 필요한 중간 결과를 함께 돌려준다."""
    system, config = inputs.system, inputs.config
    report, P = _screen(inputs)
    artifacts: dict = {"P": P}

    hard = [i for i in (1, 2, 4, 5) if report.get(i).status == "fail"]
    if hard:
        report.add(3, "propagated disturbance fits in X_P", None)
        report.add(6, "robust control invariant terminal set", None)
        report.checks.sort(key=lambda c: c.id)
        return report, artifacts

    X_P_dev, U_dev = _deviation_sets(config, inputs.X_P, inputs.U_set)
    artifacts["X_P_dev"], artifacts["U_dev"] = X_P_dev, U_dev

    # Assumption 3: X_P^N ⊖ Ḡ∘W^N ≠ ∅
    state_tube = tighten_stacked(system, [X_P_dev] * config.N)
    margins = state_tube.g.reshape(config.N, -1)
    ass3 = not geo.is_empty(state_tube)
    report.add(
        3,
        "propagated disturbance fits in X_P",
        ass3,
        min_margin=float(np.min(margins)),
        per_step_min_margin=np.min(margins, axis=1),
    )

    # Assumption 6: 터미널 집합
    X_f = inputs.X_f_pinned
    iterations = 0
    if X_f is None:
        try:
            X_f, iterations = _terminal_iteration(system, config, inputs.X_P, inputs.U_set)
        except (NoTerminalSetError, ResourceLimitError) as e:
            if strict:
                raise
            cvpm_logger.warning(f"터미널 집합 계산 실패: {e}")
    if X_f is None:
        report.add(6, "robust control invariant terminal set", False, computed=False)
    else:
        margin = rci_margin(system, config, X_f, U_dev)
        inside = geo.is_subset(X_f, X_P_dev, settings.constraint_tol)
        report.add(
            6,
            "robust control invariant terminal set",
            margin >= -settings.constraint_tol and inside,
            rci_margin=margin,
            X_f_in_X_P=inside,
            pinned=inputs.X_f_pinned is not None,
            iterations=iterations,
            facets=X_f.n_constraints,
        )
    artifacts["X_f"], artifacts["terminal_iterations"] = X_f, iterations
    report.checks.sort(key=lambda c: c.id)
    return report, artifacts


def validate_assumptions(inputs: ProblemInputs) -> AssumptionReport:
    """가정별 pass/fail 과 수치 근거. 예외 없이 리포트만 돌려준다."""
    try:
        report, _ = _assess(inputs, strict=False)
    except AssumptionError as e:
        return e.report or AssumptionReport()
    return report


def _lqr_invariance(system: LinearSystem, K: np.ndarray, X_C1: Polytope | None, U_dev: Polytope) -> dict:
    """
    u = −K Δx 가 X_C1 을 불변으로 유지하는지 정점 단위로 확인한다.
    사상이 선형이고 집합이 볼록이므로 X_C1 정점 × W 정점 검사로 충분하다.
    """
    if X_C1 is None or X_C1.dim > 3:
        return {"checked": False}
    violations = 0
    w_vertices = geo.vertices(system.W)
    for v in geo.vertices(X_C1):
        u = -K @ v
        if not geo.contains(U_dev, u, 1e-6):
            violations += 1
            continue
        for w in w_vertices:
            if not geo.contains(X_C1, system.A @ v + system.B @ u + system.G @ w, 1e-6):
                violations += 1
    return {"checked": True, "passed": violations == 0, "violations": violations}


def _assemble(inputs: ProblemInputs, report: AssumptionReport, artifacts: dict, strict: bool) -> CvpmProblem:
    system, config = inputs.system, inputs.config
    N = config.N
    X_P_dev, U_dev = artifacts["X_P_dev"], artifacts["U_dev"]
    X_f = artifacts["X_f"]
    if X_f is None:
        raise NoTerminalSetError("터미널 집합이 없습니다.", failed=[6], report=report)

    lifted = build_lifted(system.A, system.B, system.G, N)
    P = artifacts["P"]
    K = lqr_gain(system.A, system.B, config.Q, config.R)
    sigma_x = steady_state_covariance(system.A, system.G, system.sigma_w)
    S = terminal_precision(system.A, system.B, K, sigma_x)

    U_stack = geo.cartesian_power(U_dev, N)
    tube = None
    if report.get(3).status == "pass":
        tube = tighten_stacked(system, [X_P_dev] * (N - 1) + [X_f])
        if geo.is_empty(tube):
            tube = None
    X_C1 = None if tube is None else _case1_set(lifted, U_stack, tube)
    if X_C1 is None and strict:
        raise AssumptionError("X_C1 이 공집합입니다.", failed=[3], report=report)
    volume = 0.0
    if X_C1 is not None and X_C1.dim <= 3:
        volume = geo.volume(X_C1)

    eq_residual = system.A @ config.x_ref + system.B @ config.u_ref - config.x_ref
    if np.max(np.abs(eq_residual)) > 1e-6:
        cvpm_logger.warning(
            f"기준점이 평형점이 아닙니다: A x_ref + B u_ref − x_ref = {np.round(eq_residual, 6).tolist()}"
        )
    lqr_diag = _lqr_invariance(system, K, X_C1, U_dev)
    if lqr_diag.get("checked") and not lqr_diag["passed"]:
        cvpm_logger.warning(f"LQR 이득이 X_C1 불변성을 보장하지 않습니다: {lqr_diag}")

    problem = CvpmProblem(
        system=system,
        config=config,
        X_P=inputs.X_P,
        U_set=inputs.U_set,
        X_P_dev=X_P_dev,
        U_dev=U_dev,
        U_stack=U_stack,
        lifted=lifted,
        X_f=X_f,
        tube=tube,
        X_C1=X_C1,
        X_C1_volume=volume,
        P=P,
        sigma_x=sigma_x,
        K=K,
        S=S,
        cov_plain=block_cov_inverse(sigma_x, S, N, adapted=False),
        cov_adapted=block_cov_inverse(sigma_x, S, N, adapted=True),
        report=report,
        terminal_pinned=inputs.X_f_pinned is not None,
        terminal_iterations=artifacts.get("terminal_iterations", 0),
        diagnostics={
            "equilibrium_residual": eq_residual,
            "lqr_invariance": lqr_diag,
            "spectral_radius": report.get(4).evidence["spectral_radius"],
        },
    )
    cvpm_logger.info(
        f"CVPM 문제 생성: N={N}, X_f {X_f.n_constraints}면, "
        f"X_C1 {'없음' if X_C1 is None else f'{X_C1.n_constraints}면, 면적 {volume:.6f}'}"
    )
    return problem


def build_problem(inputs: ProblemInputs) -> CvpmProblem:
    """가정을 검증하고 오프라인 집합을 모두 계산한다. 하드 실패는 AssumptionError."""
    report, artifacts = _assess(inputs, strict=True)
    if not report.passed:
        raise AssumptionError(
            f"가정 검증 실패: {report.failed}", failed=report.failed, report=report
        )
    return _assemble(inputs, report, artifacts, strict=True)


def _rebuild(problem: CvpmProblem, system: LinearSystem, X_P: Polytope) -> CvpmProblem:
    """
    런타임 집합 변경. 전처리 없이 계속 제어할 수 있도록 Assumption 3 실패는 허용하고
    (X_C1 = ∅ 이면 Case 2 대체 목표로 동작), 터미널 집합은 고정돼 있으면 재검증만 한다.
    """
    pinned = problem.X_f if problem.terminal_pinned else None
    inputs = ProblemInputs(system, problem.config, X_P, problem.U_set, X_f_pinned=pinned)
    report, artifacts = _assess(inputs, strict=False)
    hard = [i for i in (1, 2, 4, 5) if report.get(i).status == "fail"]
    if hard:
        raise AssumptionError(f"집합 변경 후 가정 실패: {hard}", failed=hard, report=report)
    if artifacts.get("X_f") is None:
        # 새 터미널 집합이 없으면 이전 X_f 를 새 X_P 안으로 잘라 유지
        kept = geo.intersect(problem.X_f, artifacts["X_P_dev"])
        if geo.is_empty(kept):
            raise NoTerminalSetError("집합 변경 후 터미널 집합이 공집합입니다.", failed=[6], report=report)
        artifacts["X_f"] = geo.remove_redundancy(kept)
        cvpm_logger.warning("새 터미널 집합 계산 실패, 이전 X_f 를 유지합니다.")
    if report.get(6).status == "fail":
        cvpm_logger.warning(f"집합 변경 후 Assumption 6 재검증 실패: {report.get(6).evidence}")
    return _assemble(inputs, report, artifacts, strict=False)


def update_disturbance_set(problem: CvpmProblem, W: Polytope, sigma_w=None) -> CvpmProblem:
    system = problem.system
    new_system = LinearSystem(
        system.A, system.B, system.G, system.sigma_w if sigma_w is None else sigma_w, W
    )
    cvpm_logger.info(f"외란 집합 변경: W {W.n_constraints}면")
    return _rebuild(problem, new_system, problem.X_P)


def update_state_constraints(problem: CvpmProblem, X_P: Polytope) -> CvpmProblem:
    cvpm_logger.info(f"상태 제약 변경: X_P {X_P.n_constraints}면")
    return _rebuild(problem, problem.system, X_P)


# ---------------------------------------------------------------------------
# 케이스 판정
# ---------------------------------------------------------------------------


def _admissible_dev(problem: CvpmProblem, dx: np.ndarray) -> Polytope:
    if problem.tube is None:
        return geo.empty_polytope(problem.U_stack.dim)
    tube, L = problem.tube, problem.lifted
    F = np.vstack([problem.U_stack.F, tube.F @ L.B_lift])
    g = np.concatenate([problem.U_stack.g, tube.g - tube.F @ (L.A_lift @ dx)])
    return Polytope(F, g)


def admissible_input_polytope(problem: CvpmProblem, x) -> Polytope:
    """
    x 에서 제약 만족을 보장하는 입력 시퀀스 집합 (절대 좌표 U ∈ R^{N·n_u}).
    공집합 ⟺ x ∉ X_C1.
    """
    dx = problem.to_dev_state(x)
    return geo.translate(_admissible_dev(problem, dx), problem.stacked_u_ref())


def _x_c1_margin(problem: CvpmProblem, dx: np.ndarray) -> float:
    if problem.X_C1 is None:
        return np.inf
    P = problem.X_C1.normalized()
    return float(np.max(P.F @ dx - P.g))


def _dispatch(problem: CvpmProblem, dx: np.ndarray, step: int | None = None) -> tuple[Case, dict]:
    point, status = geo.feasible_point(_admissible_dev(problem, dx))
    if status.kind not in ("optimal", "infeasible"):
        raise SolverError(f"케이스 판정 LP 실패 ({status.kind})", status=status)
    lp_safe = status.ok
    margin = _x_c1_margin(problem, dx)
    set_safe = margin <= settings.constraint_tol
    if lp_safe != set_safe and abs(margin) > settings.case_band:
        raise ConsistencyError(
            f"케이스 판정 불일치: LP={'Safe' if lp_safe else 'Probabilistic'}, X_C1 여유={margin:.3e}",
            step=step,
        )
    case = Case.SAFE if lp_safe else Case.PROBABILISTIC
    return case, {"x_c1_margin": margin, "admissible_point": point}


def detect_case(problem: CvpmProblem, x) -> Case:
    """LP 공집합 판정이 기준이고, X_C1 멤버십은 교차 검증용이다."""
    case, _ = _dispatch(problem, problem.to_dev_state(x))
    return case


def classify_state(problem: CvpmProblem, x, step: int | None = None) -> tuple[Case, float]:
    """케이스와 X_C1 여유 (≤ 0 이면 X_C1 안)."""
    case, info = _dispatch(problem, problem.to_dev_state(x), step=step)
    return case, info["x_c1_margin"]


# ---------------------------------------------------------------------------
# Case 1
# ---------------------------------------------------------------------------


def case1_qp(problem: CvpmProblem, dx: np.ndarray) -> tuple[QpProblem, float]:
    """
    편차 좌표 응축 QP 와 상수항.

    J = Δxᵀ Q Δx + (ĀΔx + B̄ΔU)ᵀ Q̄ (ĀΔx + B̄ΔU) + ΔUᵀ R̄ ΔU,
    Q̄ = diag(Q, …, Q, P), R̄ = diag(R, …, R)
    """
    cfg, L = problem.config, problem.lifted
    N = cfg.N
    Q_bar = np.kron(np.eye(N), cfg.Q)
    Q_bar[-cfg.n_x :, -cfg.n_x :] = problem.P
    R_bar = np.kron(np.eye(N), cfg.R)
    free = L.A_lift @ dx
    H = 2.0 * (L.B_lift.T @ Q_bar @ L.B_lift + R_bar)
    f = 2.0 * L.B_lift.T @ Q_bar @ free
    const = float(dx @ cfg.Q @ dx + free @ Q_bar @ free)
    admissible = _admissible_dev(problem, dx)
    return QpProblem(H, f, admissible.F, admissible.g), const


def _status_diag(status: SolveStatus) -> dict:
    return {
        "status": status.kind,
        "iterations": status.iterations,
        "kkt_residual": status.kkt_residual,
        "regularized": status.regularized,
        "active_constraints": len(status.active_set),
    }


def solve_case1(
    problem: CvpmProblem,
    x,
    workspace: CvpmWorkspace | None = None,
    step: int | None = None,
) -> StepOutcome:
    """안전 케이스: 허용 입력 다면체 위에서 추종 비용 최소화. p_violation = 0."""
    dx = problem.to_dev_state(x)
    workspace = workspace or CvpmWorkspace()
    qp, const = case1_qp(problem, dx)
    dU, status = workspace.case1.solve(qp, x0=workspace.shifted_hint(problem.config.n_u))
    if status.kind == "infeasible":
        raise ConsistencyError("Safe 로 판정됐지만 Case-1 QP 가 불가능합니다.", step=step)
    if not status.ok:
        raise SolverError(f"Case-1 QP 실패: {status.message}", status=status)
    workspace.last_dU = dU

    U_star = dU + problem.stacked_u_ref()
    X_bar = predict_mean(problem.lifted, dx, dU) + problem.stacked_x_ref()
    return StepOutcome(
        case=Case.SAFE,
        u_applied=U_star[: problem.config.n_u].copy(),
        U_star=U_star,
        X_bar=X_bar,
        xi_star=None,
        p_violation=0.0,
        objective=qp.objective(dU) + const,
        diagnostics=_status_diag(status),
    )


# ---------------------------------------------------------------------------
# Case 2
# ---------------------------------------------------------------------------


def _case2_target(problem: CvpmProblem) -> tuple[Polytope, BlockCovariance, bool]:
    """ξ 의 목표 집합과 가중치. X_C1 = ∅ 이면 X_P^{N−1} × X_f 와 비적응 공분산으로 대체."""
    N = problem.N
    if problem.X_C1 is not None:
        return geo.cartesian_power(problem.X_C1, N), problem.cov_adapted, False
    blocks = [problem.X_P_dev] * (N - 1) + [problem.X_f]
    return geo.cartesian_product(blocks), problem.cov_plain, True


def case2_qp(problem: CvpmProblem, dx: np.ndarray) -> tuple[QpProblem, float, bool]:
    """
    z = (ΔU, ξ) 에 대한 QP. e = ĀΔx + B̄ΔU − ξ = M z + r,  M = [B̄, −I],
    목적함수 eᵀ Σ̲⁻¹ e = ½ zᵀ(2MᵀWM)z + (2MᵀWr)ᵀz + rᵀWr.
    """
    L = problem.lifted
    target, cov, fallback = _case2_target(problem)
    Winv = cov.matrix()
    n_X, n_U = L.B_lift.shape
    M = np.hstack([L.B_lift, -np.eye(n_X)])
    r = L.A_lift @ dx
    H = 2.0 * M.T @ Winv @ M
    f = 2.0 * M.T @ Winv @ r
    G = np.block(
        [
            [problem.U_stack.F, np.zeros((problem.U_stack.n_constraints, n_X))],
            [np.zeros((target.n_constraints, n_U)), target.F],
        ]
    )
    h = np.concatenate([problem.U_stack.g, target.g])
    return QpProblem(H, f, G, h), float(r @ Winv @ r), fallback


def _case2_seed(problem: CvpmProblem, fallback: bool) -> np.ndarray:
    """ΔU 는 입력 박스 중심, ξ 는 목표 집합 Chebyshev 중심 반복."""
    u_center, _ = geo.chebyshev_center(problem.U_dev)
    if fallback:
        blocks = [problem.X_P_dev] * (problem.N - 1) + [problem.X_f]
        xi = np.concatenate([geo.chebyshev_center(b)[0] for b in blocks])
    else:
        xi = np.tile(geo.chebyshev_center(problem.X_C1)[0], problem.N)
    return np.concatenate([np.tile(u_center, problem.N), xi])


def approx_violation_probability(problem: CvpmProblem, X_bar, xi, fallback: bool = False) -> float:
    """
    1 − clamp(c'·exp(−½ d²)·V, 0, 1),
    c' = ((2π)^{n_x N} det Σ̲)^{−1/2},  d² = (X̄ − ξ)ᵀ Σ̲⁻¹ (X̄ − ξ),  V = V(X_C1)^N.
    Σ̲ 는 비적응 블록 대각 공분산. 로그 영역에서 계산한다.
    """
    X_bar = np.asarray(X_bar, dtype=float).ravel()
    xi = np.asarray(xi, dtype=float).ravel()
    n_x, N = problem.system.n_x, problem.N
    if X_bar.size != n_x * N or xi.size != n_x * N:
        raise RejectedInputError("X̄, ξ 길이가 N·n_x 와 다릅니다.")
    sign, logdet = np.linalg.slogdet(problem.sigma_x)
    if sign <= 0:
        raise RejectedInputError("Σ̲ 가 특이합니다.")

    if fallback:
        volumes = [geo.volume(problem.X_P_dev)] * (N - 1) + [geo.volume(problem.X_f)]
    else:
        volumes = [problem.X_C1_volume] * N
    if min(volumes) <= 0.0:
        return 1.0
    log_volume = float(np.sum(np.log(volumes)))

    e = X_bar - xi
    d2 = float(e @ problem.cov_plain.matrix() @ e)
    log_c = -0.5 * (n_x * N * np.log(2.0 * np.pi) + N * logdet)
    log_mass = log_c - 0.5 * d2 + log_volume
    mass = 1.0 if log_mass >= 0.0 else float(np.exp(log_mass))
    return float(1.0 - min(max(mass, 0.0), 1.0))


def solve_case2(
    problem: CvpmProblem,
    x,
    workspace: CvpmWorkspace | None = None,
    step: int | None = None,
) -> StepOutcome:
    """확률 케이스: 평균 궤적과 X_C1^N 의 Mahalanobis 거리 최소화."""
    dx = problem.to_dev_state(x)
    workspace = workspace or CvpmWorkspace()
    qp, const, fallback = case2_qp(problem, dx)
    if fallback:
        cvpm_logger.warning("X_C1 이 비어 있어 Case 2 목표를 X_P^{N−1} × X_f 로 대체합니다.")
    z, status = workspace.case2.solve(qp, x0=_case2_seed(problem, fallback))
    if not status.ok:
        raise SolverError(f"Case-2 QP 실패: {status.message}", status=status)

    n_U = problem.U_stack.dim
    dU, xi_dev = z[:n_U], z[n_U:]
    workspace.last_dU = dU
    X_bar = predict_mean(problem.lifted, dx, dU) + problem.stacked_x_ref()
    xi = xi_dev + problem.stacked_x_ref()
    U_star = dU + problem.stacked_u_ref()
    diagnostics = _status_diag(status)
    diagnostics["fallback"] = fallback
    return StepOutcome(
        case=Case.PROBABILISTIC,
        u_applied=U_star[: problem.config.n_u].copy(),
        U_star=U_star,
        X_bar=X_bar,
        xi_star=xi,
        p_violation=approx_violation_probability(problem, X_bar, xi, fallback=fallback),
        objective=max(qp.objective(z) + const, 0.0),
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# 스텝
# ---------------------------------------------------------------------------


def cvpm_step(
    problem: CvpmProblem,
    x,
    workspace: CvpmWorkspace | None = None,
    step: int | None = None,
) -> StepOutcome:
    """한 MPC 반복: 케이스 판정 후 해당 QP 를 풀고 첫 입력을 돌려준다."""
    dx = problem.to_dev_state(x)
    case, info = _dispatch(problem, dx, step=step)
    if case is Case.SAFE:
        outcome = solve_case1(problem, x, workspace, step=step)
    else:
        outcome = solve_case2(problem, x, workspace, step=step)
    outcome.diagnostics["x_c1_margin"] = info["x_c1_margin"]
    return outcome


def lyapunov_value(problem: CvpmProblem, x) -> float:
    """Case 1: 최적 MPC 비용, Case 2: Mahalanobis 목적값 V′."""
    return cvpm_step(problem, x).objective


def zero_violation_margin(problem: CvpmProblem, x, U) -> float:
    """
    예측 튜브 Āx + B̄U ⊕ Ḡ∘W^N 이 X_P^{N−1} × X_f 안에 있는지의 면별 최소 여유.
    ≥ 0 이면 모든 허용 외란에 대해 제약 위반이 없다.
    """
    if problem.tube is None:
        return -np.inf
    dx = problem.to_dev_state(x)
    dU = np.asarray(U, dtype=float).ravel() - problem.stacked_u_ref()
    X_dev = predict_mean(problem.lifted, dx, dU)
    return float(np.min(problem.tube.g - problem.tube.F @ X_dev))
