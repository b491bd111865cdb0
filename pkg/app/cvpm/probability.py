"""
Probability Module
절단 가우시안 외란 샘플링, Monte-Carlo 제약 위반 확률 추정, 샘플링 기반 Case-2 최적화.

난수는 Philox(카운터 기반) + SeedSequence 로 만든다. 같은 seed 와 스트림 키면
플랫폼과 스레드 수에 관계없이 같은 수열이 나온다.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag
from scipy.optimize import minimize

from app.common.errors import PathologicalTruncationError, RejectedInputError
from app.common.logger import cvpm_logger
from app.common.settings import settings
from app.cvpm import geometry as geo
from app.cvpm.controller import Case, CvpmProblem, StepOutcome, solve_case2
from app.cvpm.geometry import Polytope
from app.cvpm.lifting import predict_mean

_SEED_MASK = (1 << 64) - 1


class RngStream:
    """seed 와 스트림 키로 식별되는 재현 가능한 난수 스트림. counter 는 지금까지 뽑은 수."""

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed) & _SEED_MASK
        self.key = tuple(int(k) for k in key)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._generator = np.random.Generator(np.random.Philox(sequence))
        self.counter = 0

    def child(self, *key: int) -> "RngStream":
        """독립된 하위 스트림 (예: 외란 = child(0), Monte-Carlo = child(1))."""
        return RngStream(self.seed, self.key + tuple(key))

    def split(self, n: int) -> list["RngStream"]:
        return [self.child(i) for i in range(n)]

    def standard_normal(self, size) -> np.ndarray:
        out = self._generator.standard_normal(size)
        self.counter += out.size
        return out

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key}, counter={self.counter})"


def _cholesky(cov, name: str) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    try:
        return np.linalg.cholesky(0.5 * (cov + cov.T))
    except np.linalg.LinAlgError as e:
        raise RejectedInputError(f"{name} 가 양의 정부호가 아닙니다.") from e


def mvn_sample(mean, cov_chol, rng: RngStream, size: int | None = None) -> np.ndarray:
    """mean + L z,  z ~ N(0, I). size 가 있으면 (size, n) 배열."""
    mean = np.asarray(mean, dtype=float).ravel()
    L = np.atleast_2d(np.asarray(cov_chol, dtype=float))
    if size is None:
        return mean + L @ rng.standard_normal(L.shape[1])
    return mean + rng.standard_normal((size, L.shape[1])) @ L.T


class TruncatedGaussianSampler:
    """
    w ~ N(0, Σ_w) 를 W 로 절단한 분포의 기각 샘플러.
    생성 시 예비 배치로 수락률을 재고, truncation_min_rate 미만이면 거부한다.
    """

    def __init__(self, sigma_w, W: Polytope, pilot_rng: RngStream):
        self.L = _cholesky(sigma_w, "Σ_w")
        self.W = W
        if W.dim != self.L.shape[0]:
            raise RejectedInputError("W 차원이 Σ_w 와 다릅니다.")
        if not geo.contains(W, np.zeros(W.dim)):
            raise RejectedInputError("W 는 원점을 포함해야 합니다.")
        pilot = mvn_sample(np.zeros(W.dim), self.L, pilot_rng, size=settings.truncation_pilot)
        self.acceptance_rate = float(np.mean(self._inside(pilot)))
        if self.acceptance_rate < settings.truncation_min_rate:
            raise PathologicalTruncationError(
                f"절단 가우시안 수락률 {self.acceptance_rate:.2e} 가 최소치 "
                f"{settings.truncation_min_rate:.0e} 보다 낮습니다."
            )

    def _inside(self, samples: np.ndarray) -> np.ndarray:
        return np.all(samples @ self.W.F.T <= self.W.g, axis=1)

    def sample(self, rng: RngStream, size: int | None = None) -> np.ndarray:
        n = 1 if size is None else int(size)
        accepted: list[np.ndarray] = []
        count = 0
        batch = max(8, int(np.ceil(n / max(self.acceptance_rate, 1e-12) * 1.2)))
        for _ in range(10_000):
            draws = mvn_sample(np.zeros(self.W.dim), self.L, rng, size=batch)
            ok = draws[self._inside(draws)]
            accepted.append(ok)
            count += len(ok)
            if count >= n:
                break
        else:
            raise PathologicalTruncationError("기각 샘플링이 필요한 표본 수를 채우지 못했습니다.")
        out = np.vstack(accepted)[:n]
        return out[0] if size is None else out


def sample_truncated_gaussian(sigma_w, W: Polytope, rng: RngStream) -> np.ndarray:
    """W 안의 표본 하나. 수락률 예비 배치는 rng 의 하위 스트림으로 한다."""
    return TruncatedGaussianSampler(sigma_w, W, rng.child(0xFFFF)).sample(rng)


# ---------------------------------------------------------------------------
# Monte-Carlo
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class McEstimate:
    p_hat: float
    n_samples: int
    n_inside: int
    std_err: float

    @classmethod
    def from_counts(cls, n_inside: int, n_samples: int) -> "McEstimate":
        p = 1.0 - n_inside / n_samples
        return cls(p, n_samples, n_inside, float(np.sqrt(p * (1.0 - p) / n_samples)))


def constraint_target(problem: CvpmProblem) -> Polytope:
    """X_P^{N−1} × X_f (편차 좌표, 적층)"""
    return geo.cartesian_product([problem.X_P_dev] * (problem.N - 1) + [problem.X_f])


def trajectory_draws(problem: CvpmProblem, n_samples: int, rng: RngStream) -> np.ndarray:
    """diag(Σ_x, …, Σ_x) 를 따르는 영평균 궤적 편차 (n_samples × N·n_x). CRN 으로 재사용한다."""
    if n_samples < 100:
        raise RejectedInputError(f"n_samples 는 100 이상이어야 합니다: {n_samples}")
    L = _cholesky(problem.sigma_x, "Σ_x")
    L_bar = block_diag(*([L] * problem.N))
    return mvn_sample(np.zeros(L_bar.shape[0]), L_bar, rng, size=n_samples)


def _estimate(problem: CvpmProblem, dx: np.ndarray, dU: np.ndarray, draws: np.ndarray, target: Polytope) -> McEstimate:
    mean = predict_mean(problem.lifted, dx, dU)
    samples = mean + draws
    inside = np.all(samples @ target.F.T <= target.g, axis=1)
    return McEstimate.from_counts(int(np.sum(inside)), draws.shape[0])


def monte_carlo_violation(
    problem: CvpmProblem,
    x,
    U,
    n_samples: int | None = None,
    rng: RngStream | None = None,
    *,
    draws: np.ndarray | None = None,
    target: Polytope | None = None,
) -> McEstimate:
    """
    X ~ N(Āx + B̄U, diag(Σ_x, …, Σ_x)) 표본 중 X_P^{N−1} × X_f 밖의 비율.
    draws 를 넘기면 같은 난수(CRN)로 평가한다. target 은 편차 좌표 적층 집합.
    """
    dx = problem.to_dev_state(x)
    dU = np.asarray(U, dtype=float).ravel() - problem.stacked_u_ref()
    if draws is None:
        if rng is None:
            raise RejectedInputError("rng 또는 draws 중 하나가 필요합니다.")
        draws = trajectory_draws(problem, n_samples or settings.mc_samples, rng)
    return _estimate(problem, dx, dU, draws, target or constraint_target(problem))


def _input_bounds(problem: CvpmProblem) -> list[tuple[float, float]]:
    U = problem.U_dev
    upper = geo.support_many(U, np.eye(U.dim))
    lower = -geo.support_many(U, -np.eye(U.dim))
    return list(zip(np.tile(lower, problem.N), np.tile(upper, problem.N)))


def solve_case2_sampling(
    problem: CvpmProblem,
    x,
    n_samples: int | None = None,
    rng: RngStream | None = None,
    step: int | None = None,
) -> StepOutcome:
    """
    Monte-Carlo 위반 확률을 Nelder–Mead 로 직접 최소화한다.

    - 한 번의 풀이 동안 난수는 고정(CRN)이라 목적함수가 결정적이다.
    - 시작점은 Case-2 QP 해. MC 목적함수는 넓은 평탄 구간을 가지므로
      임의 시작점에서는 NM 이 움직이지 못한다.
    - 입력 박스 밖의 점은 박스로 잘라 평가한다.
    """
    n_samples = n_samples or settings.mc_samples
    rng = rng or RngStream(0)
    dx = problem.to_dev_state(x)
    draws = trajectory_draws(problem, n_samples, rng)
    target = constraint_target(problem)
    bounds = _input_bounds(problem)
    lo, hi = np.array([b[0] for b in bounds]), np.array([b[1] for b in bounds])

    seed_outcome = solve_case2(problem, x, step=step)
    dU0 = seed_outcome.U_star - problem.stacked_u_ref()

    def objective(dU):
        return _estimate(problem, dx, np.clip(dU, lo, hi), draws, target).p_hat

    result = minimize(
        objective,
        dU0,
        method="Nelder-Mead",
        bounds=bounds,
        options={"maxfev": settings.nm_max_fev, "xatol": 1e-6, "fatol": 0.0},
    )
    dU_best = np.clip(result.x, lo, hi)
    initial = objective(dU0)
    if result.fun > initial:
        dU_best = dU0
    estimate = _estimate(problem, dx, dU_best, draws, target)
    exhausted = result.nfev >= settings.nm_max_fev
    if exhausted:
        cvpm_logger.info(f"Nelder–Mead 평가 예산 소진 ({result.nfev}회), 최선값 {estimate.p_hat:.4f}")

    U_star = dU_best + problem.stacked_u_ref()
    return StepOutcome(
        case=Case.PROBABILISTIC,
        u_applied=U_star[: problem.config.n_u].copy(),
        U_star=U_star,
        X_bar=predict_mean(problem.lifted, dx, dU_best) + problem.stacked_x_ref(),
        xi_star=None,
        p_violation=estimate.p_hat,
        objective=estimate.p_hat,
        diagnostics={
            "method": "montecarlo",
            "n_samples": n_samples,
            "std_err": estimate.std_err,
            "initial_p_hat": initial,
            "qp_objective": seed_outcome.objective,
            "evaluations": int(result.nfev),
            "budget_exhausted": bool(exhausted),
        },
    )
