"""
Closed Loop Module
시나리오를 폐루프로 실행한다.

한 스텝의 순서
1. 현재(이벤트 전) 상태로 제어 입력 u_t 계산
2. 해당 스텝의 집합 변경 이벤트 적용 (다음 스텝 제어기부터 반영), 만료된 단기 변경 복원
3. 플랜트 외란 (비모델 외란 포함) 을 더해 상태 전진

플랜트는 기준점 주변 편차 모델 x⁺ = x_ref + A(x − x_ref) + B(u − u_ref) + G w 이다.
"""

import traceback
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from app.common.errors import ConsistencyError, CvpmError
from app.common.logger import sim_logger
from app.common.settings import settings
from app.cvpm import geometry as geo
from app.cvpm.controller import (
    Case,
    CvpmProblem,
    CvpmWorkspace,
    LinearSystem,
    ProblemInputs,
    StepOutcome,
    build_problem,
    classify_state,
    compute_terminal_set,
    cvpm_step,
    solve_case1,
    update_disturbance_set,
    update_state_constraints,
)
from app.cvpm.probability import (
    RngStream,
    TruncatedGaussianSampler,
    monte_carlo_violation,
    solve_case2_sampling,
)
from app.routers.sim.scenario import (
    Scenario,
    UnmodeledDisturbance,
    UpdateDisturbanceSet,
    UpdateStateConstraints,
)

# RngStream 하위 키
DISTURBANCE_STREAM = 0
MONTE_CARLO_STREAM = 1
PILOT_STREAM = 2


def _log_and_print(message: str):
    """로그와 print 동시 출력 (echo_stdout 일 때만 print)"""
    sim_logger.info(message)
    if settings.echo_stdout:
        print(message)


@dataclass
class StepRecord:
    t: int
    x: np.ndarray
    u: np.ndarray
    case: Case
    p_violation: float
    lyapunov: float
    objective: float
    active_set: int
    recomputed: bool
    x_c1_margin: float
    p_mc: float | None = None


@dataclass
class SimulationTrace:
    scenario: str
    method: str
    seed: int
    records: list[StepRecord] = field(default_factory=list)
    final_state: np.ndarray | None = None
    sets: dict[str, list[list[float]]] = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    @property
    def cases(self) -> list[str]:
        return [r.case.value for r in self.records]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.records:
            row = {"t": r.t}
            row.update({f"x{i + 1}": float(v) for i, v in enumerate(r.x)})
            if r.u.size == 1:
                row["u"] = float(r.u[0])
            else:
                row.update({f"u{i + 1}": float(v) for i, v in enumerate(r.u)})
            row.update(
                {
                    "case": r.case.value,
                    "p_violation": r.p_violation,
                    "lyapunov": r.lyapunov,
                    "objective": r.objective,
                    "active_set": r.active_set,
                    "recomputed": r.recomputed,
                }
            )
            if r.p_mc is not None:
                row["p_mc"] = r.p_mc
            rows.append(row)
        return pd.DataFrame(rows)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "method": self.method,
            "seed": self.seed,
            "steps": [
                {
                    "t": r.t,
                    "x": [float(v) for v in r.x],
                    "u": [float(v) for v in r.u],
                    "case": r.case.value,
                    "p_violation": float(r.p_violation),
                    "lyapunov": float(r.lyapunov),
                    "objective": float(r.objective),
                    "active_set": int(r.active_set),
                    "recomputed": bool(r.recomputed),
                    "p_mc": None if r.p_mc is None else float(r.p_mc),
                }
                for r in self.records
            ],
            "final_state": None if self.final_state is None else [float(v) for v in self.final_state],
            "sets": self.sets,
        }

    def summary(self) -> dict:
        cases = self.cases
        first_safe = next((r.t for r in self.records if r.case is Case.SAFE), None)
        return {
            "scenario": self.scenario,
            "method": self.method,
            "seed": self.seed,
            "steps": len(self.records),
            "safe_steps": cases.count(Case.SAFE.value),
            "probabilistic_steps": cases.count(Case.PROBABILISTIC.value),
            "first_safe_step": first_safe,
            "final_state": None if self.final_state is None else [float(v) for v in self.final_state],
        }


def set_vertices(problem: CvpmProblem) -> dict[str, list[list[float]]]:
    """X_P, X_f, X_C1 의 절대 좌표 정점 (2차원이면 반시계 순)."""
    out = {}
    for name, P in problem.sets_absolute().items():
        if P is None or P.dim > 3 or geo.is_empty(P):
            out[name] = []
            continue
        out[name] = [[float(c) for c in v] for v in geo.vertices(P)]
    return out


def build_scenario_problem(scenario: Scenario) -> CvpmProblem:
    """시나리오로 CvpmProblem 생성. terminal_design_W 가 있으면 그 W 로 X_f 를 고정한다."""
    inputs = scenario.to_inputs()
    if scenario.terminal_design_W is not None:
        s = inputs.system
        design = LinearSystem(s.A, s.B, s.G, s.sigma_w, scenario.terminal_design_W.to_polytope())
        X_f = compute_terminal_set(design, inputs.config, inputs.X_P, inputs.U_set)
        inputs = ProblemInputs(s, inputs.config, inputs.X_P, inputs.U_set, X_f_pinned=X_f)
        _log_and_print(f"터미널 집합 고정: 설계 W 로 {X_f.n_constraints}면 X_f 계산")
    return build_problem(inputs)


def _deviation_plant(problem: CvpmProblem, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    s, c = problem.system, problem.config
    return c.x_ref + s.A @ (x - c.x_ref) + s.B @ (u - c.u_ref) + s.G @ w


class _Controller:
    """방식(qp / montecarlo)에 따라 한 스텝 입력을 계산한다."""

    def __init__(self, scenario: Scenario, mc_rng: RngStream):
        self.method = scenario.method
        self.mc_samples = scenario.mc_samples or settings.mc_samples
        self.mc_rng = mc_rng
        self.workspace = CvpmWorkspace()

    def step(self, problem: CvpmProblem, x: np.ndarray, t: int) -> StepOutcome:
        if self.method == "qp":
            return cvpm_step(problem, x, self.workspace, step=t)
        case, margin = classify_state(problem, x, step=t)
        if case is Case.SAFE:
            outcome = solve_case1(problem, x, self.workspace, step=t)
        else:
            outcome = solve_case2_sampling(problem, x, self.mc_samples, self.mc_rng.child(t), step=t)
        outcome.diagnostics["x_c1_margin"] = margin
        return outcome


def run_closed_loop(scenario: Scenario, problem: CvpmProblem | None = None) -> SimulationTrace:
    """
    시나리오를 T 스텝 실행해 SimulationTrace 를 돌려준다. 같은 seed 면 결과가 같다.
    내부 일관성 오류는 스텝 번호를 달아 다시 던진다.
    """
    problem = problem or build_scenario_problem(scenario)
    root = RngStream(scenario.seed)
    disturbance_rng = root.child(DISTURBANCE_STREAM)
    mc_rng = root.child(MONTE_CARLO_STREAM)
    sampler = TruncatedGaussianSampler(problem.system.sigma_w, problem.system.W, root.child(PILOT_STREAM))
    controller = _Controller(scenario, mc_rng)

    events: dict[int, list] = {}
    for event in scenario.events:
        events.setdefault(event.t, []).append(event)
    restores: dict[int, list[tuple[str, object]]] = {}

    trace = SimulationTrace(scenario=scenario.name, method=scenario.method, seed=scenario.seed)
    x = np.asarray(scenario.x0, dtype=float)
    previous_case: Case | None = None
    _log_and_print(f"▶ 시뮬레이션 시작: {scenario.name}, T={scenario.steps}, method={scenario.method}")

    for t in range(scenario.steps):
        # 1️⃣ 제어 입력
        try:
            outcome = controller.step(problem, x, t)
        except ConsistencyError as e:
            e.step = t
            sim_logger.error(f"[t={t}] 내부 일관성 오류로 중단: {e}")
            raise
        except CvpmError as e:
            sim_logger.error(f"[t={t}] 제어 실패: {e}\n{traceback.format_exc()}")
            raise
        if outcome.case is not previous_case:
            _log_and_print(f"[t={t}] 케이스 전환 → {outcome.case.value}")
            previous_case = outcome.case

        p_mc = None
        if scenario.mc_report:
            estimate = monte_carlo_violation(
                problem, x, outcome.U_star, controller.mc_samples, mc_rng.child(1_000_000 + t)
            )
            p_mc = estimate.p_hat

        # 2️⃣ 집합 변경 / 복원
        recomputed = False
        for event in events.get(t, []):
            if isinstance(event, UpdateDisturbanceSet):
                if event.duration:
                    restores.setdefault(t + event.duration, []).append(
                        ("W", (problem.system.W, problem.system.sigma_w))
                    )
                problem = update_disturbance_set(problem, event.W.to_polytope(), event.sigma_w)
                recomputed = True
                _log_and_print(f"[t={t}] 외란 집합 변경 (duration={event.duration})")
            elif isinstance(event, UpdateStateConstraints):
                if event.duration:
                    restores.setdefault(t + event.duration, []).append(("X_P", problem.X_P))
                problem = update_state_constraints(problem, event.X_P.to_polytope())
                recomputed = True
                _log_and_print(f"[t={t}] 상태 제약 변경 (duration={event.duration})")
        for kind, previous in restores.pop(t, []):
            if kind == "W":
                W, sigma_w = previous
                problem = update_disturbance_set(problem, W, sigma_w)
            else:
                problem = update_state_constraints(problem, previous)
            recomputed = True
            _log_and_print(f"[t={t}] 단기 변경 만료, {kind} 복원")
        if recomputed:
            sampler = TruncatedGaussianSampler(
                problem.system.sigma_w, problem.system.W, root.child(PILOT_STREAM, t)
            )

        # 3️⃣ 외란과 상태 전진
        if scenario.disturbance == "zero":
            w = np.zeros(problem.system.n_x)
        else:
            w = sampler.sample(disturbance_rng)
        for event in events.get(t, []):
            if isinstance(event, UnmodeledDisturbance):
                w = w + np.asarray(event.w_extra, dtype=float)
                _log_and_print(f"[t={t}] 비모델 외란 적용: w_extra={event.w_extra}")

        trace.records.append(
            StepRecord(
                t=t,
                x=x.copy(),
                u=outcome.u_applied.copy(),
                case=outcome.case,
                p_violation=outcome.p_violation,
                lyapunov=float(outcome.diagnostics.get("qp_objective", outcome.objective)),
                objective=outcome.objective,
                active_set=int(outcome.diagnostics.get("active_constraints", 0)),
                recomputed=recomputed,
                x_c1_margin=float(outcome.diagnostics.get("x_c1_margin", np.nan)),
                p_mc=p_mc,
            )
        )
        x = _deviation_plant(problem, x, outcome.u_applied, w)

    trace.final_state = x
    trace.sets = set_vertices(problem)
    summary = trace.summary()
    _log_and_print(
        f"■ 시뮬레이션 종료: Safe {summary['safe_steps']} / Probabilistic {summary['probabilistic_steps']}"
    )
    return trace
