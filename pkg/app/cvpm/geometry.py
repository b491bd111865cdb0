"""
Geometry Module
H-표현(F x ≤ g) 유계 폴리토프 대수.

상태/입력/외란 집합, 터미널 집합, X_C1 등 모든 집합 계산이 여기 위에서 돌아간다.
고차원(리프트된 R²⁰ 등) 객체는 H-표현 그대로 두고 지지함수 LP 로만 다루며,
정점 기반 연산은 dim ≤ 3 에서만 허용한다.
"""

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from app.common.errors import (
    RejectedInputError,
    ResourceLimitError,
    SolverError,
    UnsupportedOperationError,
)
from app.common.settings import settings
from app.cvpm.optimizers import LpProblem, SolveStatus, solve_lp

_ZERO_ROW = 1e-12


@dataclass(frozen=True, eq=False)
class Polytope:
    """{x : F x ≤ g}. 생성 후 불변이며 스레드 간 공유해도 안전하다."""

    F: np.ndarray
    g: np.ndarray
    canonical: bool = False

    def __post_init__(self):
        F = np.array(self.F, dtype=float, ndmin=2)
        g = np.array(self.g, dtype=float).ravel()
        if F.shape[0] < 1 or F.shape[1] < 1:
            raise RejectedInputError(f"폴리토프는 최소 1개 행과 1개 열이 필요합니다: {F.shape}")
        if F.shape[0] != g.size:
            raise RejectedInputError(f"F 행 수({F.shape[0]})와 g 길이({g.size})가 다릅니다.")
        if not np.all(np.isfinite(F)) or not np.all(np.isfinite(g)):
            raise RejectedInputError("F, g 에 유한하지 않은 값이 있습니다.")
        F.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "g", g)

    @property
    def dim(self) -> int:
        return self.F.shape[1]

    @property
    def n_constraints(self) -> int:
        return self.F.shape[0]

    def normalized(self) -> "Polytope":
        """각 행을 단위 노름으로 정규화. 자명한 0 행(0 ≤ g)은 버린다."""
        if self.canonical:
            return self
        norms = np.linalg.norm(self.F, axis=1)
        zero = norms <= _ZERO_ROW
        if np.any(zero & (self.g < -1e-10)):
            # 0 ≤ 음수: 공집합. 정규화 대신 모순 행 쌍으로 표현
            return empty_polytope(self.dim)
        keep = ~zero
        if not np.any(keep):
            raise RejectedInputError("모든 행이 자명합니다 (전체 공간은 유계 폴리토프가 아님).")
        F = self.F[keep] / norms[keep, None]
        g = self.g[keep] / norms[keep]
        return Polytope(F, g, canonical=True)

    def to_dict(self) -> dict:
        return {"F": self.F.tolist(), "g": self.g.tolist(), "dim": self.dim}

    @classmethod
    def from_dict(cls, data: dict) -> "Polytope":
        try:
            F, g = data["F"], data["g"]
        except (KeyError, TypeError) as e:
            raise RejectedInputError(f"폴리토프 직렬화 형식 오류: {e}") from e
        P = cls(np.asarray(F, dtype=float), np.asarray(g, dtype=float))
        if "dim" in data and int(data["dim"]) != P.dim:
            raise RejectedInputError(f"dim={data['dim']} 이 F 열 수 {P.dim} 와 다릅니다.")
        return P

    def __repr__(self):
        return f"Polytope(dim={self.dim}, rows={self.n_constraints})"


@dataclass(frozen=True, eq=False)
class LiftedPolytope:
    """
    {x : ∃z, (x, z) ∈ lifted} 형태의 암시적 표현.
    고차원 Minkowski 합처럼 명시적 H-표현이 폭증하는 집합을 들고 다닐 때 쓴다.
    """

    lifted: Polytope
    dim: int

    def contains(self, x: np.ndarray, tol: float | None = None) -> bool:
        tol = settings.constraint_tol if tol is None else tol
        x = _as_point(x, self.dim)
        F_x, F_z = self.lifted.F[:, : self.dim], self.lifted.F[:, self.dim :]
        rhs = self.lifted.g - F_x @ x + tol
        if F_z.shape[1] == 0:
            return bool(np.all(rhs >= 0))
        _, status = solve_lp(LpProblem(np.zeros(F_z.shape[1]), F_z, rhs))
        return _feasibility_from_status(status)

    def project(self) -> Polytope:
        return project(self.lifted, list(range(self.dim)))


# ---------------------------------------------------------------------------
# 내부 유틸
# ---------------------------------------------------------------------------


def _as_point(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size != dim:
        raise RejectedInputError(f"차원 불일치: 점 {x.size}차원, 집합 {dim}차원")
    return x


def _check_same_dim(P: Polytope, Q: Polytope):
    if P.dim != Q.dim:
        raise RejectedInputError(f"차원 불일치: {P.dim} vs {Q.dim}")


def _feasibility_from_status(status: SolveStatus) -> bool:
    if status.kind == "optimal":
        return True
    if status.kind == "infeasible":
        return False
    raise SolverError(f"실행가능성 LP 실패: {status.kind} {status.message}", status=status)


def empty_polytope(dim: int) -> Polytope:
    """x₁ ≤ -1, -x₁ ≤ -1: 모순 쌍으로 표현한 공집합."""
    F = np.zeros((2, dim))
    F[0, 0], F[1, 0] = 1.0, -1.0
    return Polytope(F, np.array([-1.0, -1.0]))


def _dedupe_rows(F: np.ndarray, g: np.ndarray, decimals: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """같은 방향의 행은 가장 빡빡한(g 최소) 것만 남긴다. F 는 정규화돼 있어야 한다."""
    keys = np.round(F, decimals)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    best: dict[int, int] = {}
    for i, k in enumerate(inverse):
        if k not in best or g[i] < g[best[k]]:
            best[k] = i
    idx = sorted(best.values())
    return F[idx], g[idx]


# ---------------------------------------------------------------------------
# 생성 / 멤버십
# ---------------------------------------------------------------------------


def from_box(lower: Sequence[float], upper: Sequence[float]) -> Polytope:
    lower = np.asarray(lower, dtype=float).ravel()
    upper = np.asarray(upper, dtype=float).ravel()
    if lower.size != upper.size or lower.size == 0:
        raise RejectedInputError("박스 하한/상한 차원이 맞지 않습니다.")
    if np.any(lower >= upper):
        raise RejectedInputError(f"퇴화된 박스: lower={lower.tolist()}, upper={upper.tolist()}")
    n = lower.size
    I = np.eye(n)
    return Polytope(np.vstack([I, -I]), np.concatenate([upper, -lower]), canonical=True)


def contains(P: Polytope, x, tol: float | None = None) -> bool:
    tol = settings.constraint_tol if tol is None else tol
    if tol < 0:
        raise RejectedInputError("tol 은 0 이상이어야 합니다.")
    x = _as_point(x, P.dim)
    return bool(np.all(P.F @ x <= P.g + tol))


def feasible_point(P: Polytope) -> tuple[np.ndarray | None, SolveStatus]:
    """F x ≤ g 의 한 점과 LP 상태. 공집합이면 status.certificate 에 Farkas 증명서."""
    return solve_lp(LpProblem(np.zeros(P.dim), P.F, P.g))


def is_empty(P: Polytope) -> bool:
    _, status = feasible_point(P)
    return not _feasibility_from_status(status)


# ---------------------------------------------------------------------------
# 집합 연산
# ---------------------------------------------------------------------------


def intersect(P: Polytope, Q: Polytope) -> Polytope:
    _check_same_dim(P, Q)
    return Polytope(np.vstack([P.F, Q.F]), np.concatenate([P.g, Q.g]))


def affine_preimage(P: Polytope, M) -> Polytope:
    """{z : M z ∈ P}. 결과가 비유계일 수 있으므로 정점/부피 전에 유계 집합과 교차할 것."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != P.dim:
        raise RejectedInputError(f"M 행 수({M.shape[0]})가 집합 차원({P.dim})과 다릅니다.")
    return Polytope(P.F @ M, P.g)


def affine_image(M, P: Polytope) -> Polytope:
    """{M b : b ∈ P}. 가역 정방행렬은 제약 치환, 아니면 정점 사상 후 재구성 (상 차원 ≤ 3)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != P.dim:
        raise RejectedInputError(f"M 열 수({M.shape[1]})가 집합 차원({P.dim})과 다릅니다.")
    if M.shape[0] == M.shape[1] and np.linalg.cond(M) < 1e12:
        return Polytope(P.F @ np.linalg.inv(M), P.g)
    if M.shape[0] > 3 or P.dim > 3:
        raise UnsupportedOperationError(
            f"비가역 사상의 상({M.shape[0]}차원, 원 {P.dim}차원)은 명시적으로 만들 수 없습니다. 지지함수를 쓰세요."
        )
    pts = np.asarray(vertices(P)) @ M.T
    return hull_from_points(pts)


def translate(P: Polytope, t) -> Polytope:
    """P + t"""
    t = _as_point(t, P.dim)
    return Polytope(P.F, P.g + P.F @ t, canonical=P.canonical)


def support(P: Polytope, a) -> float:
    """max{aᵀx : x ∈ P}"""
    a = _as_point(a, P.dim)
    x, status = solve_lp(LpProblem(-a, P.F, P.g))
    if not status.ok:
        raise SolverError(f"지지함수 LP 실패 ({status.kind})", status=status)
    return float(a @ x)


def support_many(P: Polytope, directions) -> np.ndarray:
    D = np.atleast_2d(np.asarray(directions, dtype=float))
    return np.array([support(P, d) for d in D])


def pontryagin_diff(P: Polytope, Q: Polytope) -> Polytope:
    """P ⊖ Q: P 의 각 면을 Q 의 지지함수만큼 조인다. 공집합일 수 있다."""
    _check_same_dim(P, Q)
    Pn = P.normalized()
    shrink = support_many(Q, Pn.F)
    return Polytope(Pn.F, Pn.g - shrink, canonical=True)


def minkowski_sum(P: Polytope, Q: Polytope, explicit: bool = True) -> Polytope | LiftedPolytope:
    """
    P ⊕ Q.

    explicit=True: dim ≤ 3 에서 정점 합의 볼록껍질.
    explicit=False: {(x, p) : p ∈ P, x − p ∈ Q} 리프트 표현 (차원 제한 없음).
    """
    _check_same_dim(P, Q)
    n = P.dim
    if not explicit:
        F = np.block(
            [
                [np.zeros((P.n_constraints, n)), P.F],
                [Q.F, -Q.F],
            ]
        )
        return LiftedPolytope(Polytope(F, np.concatenate([P.g, Q.g])), n)
    if n > 3:
        raise UnsupportedOperationError(f"{n}차원 명시적 Minkowski 합은 지원하지 않습니다.")
    vp, vq = np.asarray(vertices(P)), np.asarray(vertices(Q))
    sums = (vp[:, None, :] + vq[None, :, :]).reshape(-1, n)
    return hull_from_points(sums)


def cartesian_power(P: Polytope, n: int) -> Polytope:
    if n < 1:
        raise RejectedInputError("거듭제곱 차수는 1 이상이어야 합니다.")
    return cartesian_product([P] * n)


def cartesian_product(blocks: Sequence[Polytope]) -> Polytope:
    """블록 대각 (F₁ ⊕ … ⊕ F_k, [g₁; …; g_k])"""
    if not blocks:
        raise RejectedInputError("빈 블록 목록")
    rows = sum(b.n_constraints for b in blocks)
    cols = sum(b.dim for b in blocks)
    F = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        F[r : r + b.n_constraints, c : c + b.dim] = b.F
        r += b.n_constraints
        c += b.dim
    return Polytope(F, np.concatenate([b.g for b in blocks]), canonical=all(b.canonical for b in blocks))


def is_subset(P: Polytope, Q: Polytope, tol: float | None = None) -> bool:
    """P ⊆ Q ⟺ 모든 Q 의 면에 대해 h(P, f) ≤ g + tol"""
    tol = settings.terminal_tol if tol is None else tol
    _check_same_dim(P, Q)
    Qn = Q.normalized()
    return bool(np.all(support_many(P, Qn.F) <= Qn.g + tol))


def same_set(P: Polytope, Q: Polytope, tol: float | None = None) -> bool:
    return is_subset(P, Q, tol) and is_subset(Q, P, tol)


# ---------------------------------------------------------------------------
# 정리 / 사영
# ---------------------------------------------------------------------------


def remove_redundancy(P: Polytope) -> Polytope:
    """
    행마다 LP 하나로 중복 여부를 인증하며 최소 H-표현으로 줄인다.

    행 i 는 나머지(현재까지 남은) 행과 F_i x ≤ g_i + 1 아래에서
    max F_i x ≤ g_i + lp_tol 이면 중복으로 제거된다.
    """
    if is_empty(P):
        raise RejectedInputError("공집합의 중복 제거는 정의되지 않습니다.")
    Pn = P.normalized()
    F, g = _dedupe_rows(Pn.F, Pn.g)
    keep = np.ones(F.shape[0], dtype=bool)
    for i in range(F.shape[0]):
        others = keep.copy()
        others[i] = False
        G = np.vstack([F[others], F[i]])
        h = np.concatenate([g[others], [g[i] + 1.0]])
        x, status = solve_lp(LpProblem(-F[i], G, h))
        if not status.ok:
            raise SolverError(f"중복 판정 LP 실패 ({status.kind})", status=status)
        if F[i] @ x <= g[i] + settings.lp_tol * max(1.0, abs(g[i])):
            keep[i] = False
    return Polytope(F[keep], g[keep], canonical=True)


def _fm_eliminate(F: np.ndarray, g: np.ndarray, j: int) -> tuple[np.ndarray, np.ndarray]:
    col = F[:, j]
    pos = np.where(col > _ZERO_ROW)[0]
    neg = np.where(col < -_ZERO_ROW)[0]
    zero = np.where(np.abs(col) <= _ZERO_ROW)[0]

    n_rows = len(pos) * len(neg) + len(zero)
    if n_rows > settings.fm_row_budget:
        raise ResourceLimitError(
            f"Fourier–Motzkin 행 폭증: {n_rows} > 예산 {settings.fm_row_budget}"
        )

    new_F = [np.delete(F[zero], j, axis=1)]
    new_g = [g[zero]]
    if len(pos) and len(neg):
        # (a_p/c_p) + (a_n/|c_n|) 조합으로 x_j 제거
        Fp = F[pos] / col[pos, None]
        gp = g[pos] / col[pos]
        Fn = F[neg] / -col[neg, None]
        gn = g[neg] / -col[neg]
        comb_F = (Fp[:, None, :] + Fn[None, :, :]).reshape(-1, F.shape[1])
        comb_g = (gp[:, None] + gn[None, :]).ravel()
        new_F.append(np.delete(comb_F, j, axis=1))
        new_g.append(comb_g)
    return np.vstack(new_F), np.concatenate(new_g)


def project(P: Polytope, keep_dims: Sequence[int]) -> Polytope:
    """
    keep_dims 좌표로의 사영. Fourier–Motzkin 으로 나머지 변수를 하나씩 제거하고,
    제거할 때마다 중복 행을 LP 로 걸러낸다.
    """
    keep_dims = [int(k) for k in keep_dims]
    if not keep_dims or len(keep_dims) > 3:
        raise UnsupportedOperationError(f"사영 차원은 1~3 이어야 합니다: {keep_dims}")
    if len(set(keep_dims)) != len(keep_dims) or min(keep_dims) < 0 or max(keep_dims) >= P.dim:
        raise RejectedInputError(f"잘못된 keep_dims: {keep_dims}")
    if is_empty(P):
        return empty_polytope(len(keep_dims))

    rest = [d for d in range(P.dim) if d not in keep_dims]
    order = keep_dims + rest
    current = remove_redundancy(Polytope(P.F[:, order], P.g))
    F, g = current.F, current.g

    while F.shape[1] > len(keep_dims):
        # 생성 행 수가 가장 적은 변수부터
        candidates = range(len(keep_dims), F.shape[1])
        costs = [
            np.sum(F[:, j] > _ZERO_ROW) * np.sum(F[:, j] < -_ZERO_ROW)
            - np.sum(np.abs(F[:, j]) > _ZERO_ROW)
            for j in candidates
        ]
        j = list(candidates)[int(np.argmin(costs))]
        F, g = _fm_eliminate(F, g, j)
        reduced = remove_redundancy(Polytope(F, g))
        F, g = reduced.F, reduced.g
    return Polytope(F, g, canonical=True)


# ---------------------------------------------------------------------------
# 정점 / 부피 / 중심
# ---------------------------------------------------------------------------


def _axis_bounds(P: Polytope) -> np.ndarray:
    """각 축의 [min, max]. 비유계면 SolverError(unbounded)."""
    I = np.eye(P.dim)
    upper = support_many(P, I)
    lower = -support_many(P, -I)
    return np.stack([lower, upper], axis=1)


def _merge_points(pts: np.ndarray, tol: float) -> np.ndarray:
    merged: list[np.ndarray] = []
    for p in pts:
        if not any(np.max(np.abs(p - q)) <= tol for q in merged):
            merged.append(p)
    return np.array(merged)


def vertices(P: Polytope) -> list[np.ndarray]:
    """
    정점 목록. 2차원이면 반시계 방향 정렬.
    dim ≤ 3 에서 활성 제약 조합(일괄 선형계)으로 찾는다.
    """
    if P.dim > 3:
        raise UnsupportedOperationError(f"{P.dim}차원 정점 열거는 지원하지 않습니다.")
    if is_empty(P):
        raise RejectedInputError("공집합의 정점은 정의되지 않습니다.")
    bounds = _axis_bounds(P)
    n = P.dim
    if n == 1:
        lo, hi = bounds[0]
        if hi - lo <= 1e-12:
            return [np.array([lo])]
        return [np.array([lo]), np.array([hi])]

    Pn = P.normalized()
    F, g = _dedupe_rows(Pn.F, Pn.g)
    idx = np.array(list(combinations(range(F.shape[0]), n)))
    A = F[idx]
    b = g[idx]
    det = np.linalg.det(A)
    ok = np.abs(det) > 1e-10
    if not np.any(ok):
        raise SolverError("정점 후보가 없습니다 (퇴화된 표현).")
    pts = np.linalg.solve(A[ok], b[ok][..., None])[..., 0]
    tol = settings.constraint_tol
    feasible = np.all(pts @ F.T <= g + tol, axis=1)
    pts = _merge_points(pts[feasible], 1e-9 * max(1.0, float(np.max(np.abs(bounds)))))

    if n == 2 and len(pts) > 2:
        c = pts.mean(axis=0)
        angles = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])
        pts = pts[np.argsort(angles)]
    return [p for p in pts]


def volume_2d(P: Polytope) -> float:
    if P.dim != 2:
        raise RejectedInputError(f"volume_2d 는 2차원 전용입니다 (dim={P.dim}).")
    V = np.asarray(vertices(P))
    if len(V) < 3:
        return 0.0
    x, y = V[:, 0], V[:, 1]
    return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def volume(P: Polytope) -> float:
    """dim ≤ 3 의 부피 (1차원은 길이, 2차원은 면적). 내부가 없으면 0."""
    if P.dim == 2:
        return volume_2d(P)
    if P.dim == 1:
        lo, hi = _axis_bounds(P)[0]
        return float(max(hi - lo, 0.0))
    V = np.asarray(vertices(P))
    if len(V) <= P.dim:
        return 0.0
    try:
        return float(ConvexHull(V).volume)
    except QhullError:
        return 0.0


def chebyshev_center(P: Polytope) -> tuple[np.ndarray, float]:
    """최대 내접구의 중심과 반지름. r > 0 ⟺ 내부가 비어있지 않음."""
    Pn = P.normalized()
    n = Pn.dim
    G = np.hstack([Pn.F, np.ones((Pn.n_constraints, 1))])
    G = np.vstack([G, np.concatenate([np.zeros(n), [-1.0]])])
    h = np.concatenate([Pn.g, [0.0]])
    c = np.concatenate([np.zeros(n), [-1.0]])
    z, status = solve_lp(LpProblem(c, G, h))
    if status.kind == "infeasible":
        raise RejectedInputError("공집합의 Chebyshev 중심은 없습니다.")
    if not status.ok:
        raise SolverError(f"Chebyshev LP 실패 ({status.kind})", status=status)
    return z[:n], float(z[n])


def hull_from_points(points) -> Polytope:
    """
    점들의 볼록껍질 H-표현 (dim ≤ 3).
    아핀 껍질 안에서 ConvexHull 을 만들고, 퇴화 방향은 등식 쌍으로 붙인다.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[1]
    if n > 3:
        raise UnsupportedOperationError(f"{n}차원 볼록껍질은 지원하지 않습니다.")
    c = pts.mean(axis=0)
    X = pts - c
    _, S, Vt = np.linalg.svd(X, full_matrices=True)
    scale = max(1.0, float(np.max(np.abs(pts))))
    rank = int(np.sum(S > 1e-10 * scale))

    F_rows: list[np.ndarray] = []
    g_rows: list[float] = []
    basis, normal = Vt[:rank], Vt[rank:]
    for v in normal:
        F_rows += [v, -v]
        g_rows += [float(v @ c), float(-v @ c)]

    if rank == 1:
        y = X @ basis[0]
        F_rows += [basis[0], -basis[0]]
        g_rows += [float(y.max() + basis[0] @ c), float(-y.min() - basis[0] @ c)]
    elif rank >= 2:
        Y = X @ basis.T
        try:
            hull = ConvexHull(Y)
        except QhullError as e:
            raise SolverError(f"볼록껍질 계산 실패: {e}") from e
        for eq in hull.equations:
            a, off = eq[:-1], eq[-1]
            row = a @ basis
            F_rows.append(row)
            g_rows.append(float(-off + row @ c))

    F, g = _dedupe_rows(np.array(F_rows), np.array(g_rows))
    return Polytope(F, g, canonical=True)
