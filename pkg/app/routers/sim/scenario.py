"""
Scenario Module
폐루프 실험 문서(JSON)의 스키마, 내장 DC-DC 컨버터 시나리오, 로드/저장.

행렬은 행 단위 중첩 배열, 집합은 {"box": {"lower", "upper"}} 또는 {"F", "g"} 로 적는다.
"""

import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from app.common.errors import AssumptionError, RejectedInputError, ScenarioParseError, SchemaViolationError
from app.common.logger import sim_logger
from app.cvpm import geometry as geo
from app.cvpm.controller import LinearSystem, MpcConfig, ProblemInputs, screen_assumptions
from app.cvpm.geometry import Polytope

Matrix = list[list[float]]
Vector = list[float]


class BoxSpec(BaseModel):
    lower: Vector = Field(description="하한")
    upper: Vector = Field(description="상한")


class PolytopeSpec(BaseModel):
    """박스 또는 H-표현 중 하나."""

    box: Optional[BoxSpec] = Field(default=None, description="축 정렬 박스")
    F: Optional[Matrix] = Field(default=None, description="H-표현 행렬 (행 단위)")
    g: Optional[Vector] = Field(default=None, description="H-표현 우변")

    @model_validator(mode="after")
    def _one_form(self):
        has_box = self.box is not None
        has_h = self.F is not None or self.g is not None
        if has_box == has_h:
            raise ValueError("box 또는 (F, g) 중 정확히 하나를 지정해야 합니다.")
        if has_h and (self.F is None or self.g is None):
            raise ValueError("F 와 g 를 함께 지정해야 합니다.")
        try:
            self.to_polytope()
        except RejectedInputError as e:
            raise ValueError(e.message) from e
        return self

    def to_polytope(self) -> Polytope:
        if self.box is not None:
            return geo.from_box(self.box.lower, self.box.upper)
        return Polytope(np.asarray(self.F, dtype=float), np.asarray(self.g, dtype=float))

    @classmethod
    def from_box(cls, lower, upper) -> "PolytopeSpec":
        return cls(box=BoxSpec(lower=list(lower), upper=list(upper)))

    @property
    def dim(self) -> int:
        return len(self.box.lower) if self.box is not None else len(self.F[0])


class SystemSpec(BaseModel):
    A: Matrix = Field(description="시스템 행렬")
    B: Matrix = Field(description="입력 행렬")
    G: Matrix = Field(description="외란 입력 행렬 (가역)")
    sigma_w: Matrix = Field(description="외란 공분산 Σ_w")
    W: PolytopeSpec = Field(description="외란 지지 집합 (원점 포함)")

    @field_validator("W")
    @classmethod
    def _w_contains_origin(cls, W: PolytopeSpec):
        P = W.to_polytope()
        if not geo.contains(P, np.zeros(P.dim)):
            raise ValueError("W 는 원점을 포함해야 합니다.")
        return W

    @model_validator(mode="after")
    def _shapes(self):
        n = len(self.A)
        if any(len(row) != n for row in self.A):
            raise ValueError(f"A 는 {n}×{n} 이어야 합니다.")
        if len(self.B) != n or len(self.G) != n or len(self.sigma_w) != n:
            raise ValueError("B, G, Σ_w 의 행 수가 A 와 다릅니다.")
        if any(len(row) != n for row in self.G) or any(len(row) != n for row in self.sigma_w):
            raise ValueError("G, Σ_w 는 n_x × n_x 이어야 합니다.")
        if self.W.dim != n:
            raise ValueError("W 차원이 n_x 와 다릅니다.")
        return self

    def to_system(self) -> LinearSystem:
        return LinearSystem(
            np.asarray(self.A), np.asarray(self.B), np.asarray(self.G), np.asarray(self.sigma_w), self.W.to_polytope()
        )


class ConfigSpec(BaseModel):
    N: int = Field(default=10, ge=1, description="예측 구간")
    Q: Matrix = Field(description="상태 가중치")
    R: Matrix = Field(description="입력 가중치")
    x_ref: Vector = Field(description="상태 기준값")
    u_ref: Vector = Field(description="입력 기준값")
    dt: float = Field(default=0.1, gt=0, description="샘플링 시간 [s] (메타데이터)")

    def to_config(self) -> MpcConfig:
        return MpcConfig(self.N, np.asarray(self.Q), np.asarray(self.R), self.x_ref, self.u_ref, self.dt)


class UnmodeledDisturbance(BaseModel):
    kind: Literal["unmodeled_disturbance"] = "unmodeled_disturbance"
    t: int = Field(ge=0, description="적용 스텝")
    w_extra: Vector = Field(description="해당 스텝 외란에 더해지는 값 (한 스텝만)")


class UpdateDisturbanceSet(BaseModel):
    kind: Literal["update_disturbance_set"] = "update_disturbance_set"
    t: int = Field(ge=0)
    W: PolytopeSpec
    sigma_w: Optional[Matrix] = Field(default=None, description="생략하면 기존 Σ_w 유지")
    duration: Optional[int] = Field(default=None, ge=1, description="단기 변경 길이 (스텝), 생략하면 영구")


class UpdateStateConstraints(BaseModel):
    kind: Literal["update_state_constraints"] = "update_state_constraints"
    t: int = Field(ge=0)
    X_P: PolytopeSpec
    duration: Optional[int] = Field(default=None, ge=1, description="단기 변경 길이 (스텝), 생략하면 영구")


Event = Annotated[
    Union[UnmodeledDisturbance, UpdateDisturbanceSet, UpdateStateConstraints],
    Field(discriminator="kind"),
]


class Scenario(BaseModel):
    name: str = Field(default="scenario", description="시나리오 이름")
    system: SystemSpec
    config: ConfigSpec
    X_P: PolytopeSpec = Field(description="상태 제약")
    U: PolytopeSpec = Field(description="입력 제약")
    x0: Vector = Field(description="초기 상태")
    steps: int = Field(default=100, ge=1, description="시뮬레이션 길이 T")
    seed: int = Field(default=0, ge=0, description="난수 seed")
    method: Literal["qp", "montecarlo"] = Field(default="qp", description="Case-2 풀이 방식")
    mc_samples: Optional[int] = Field(default=None, ge=100, description="Monte-Carlo 표본 수")
    mc_report: bool = Field(default=False, description="스텝별 Monte-Carlo 위반 추정 기록")
    disturbance: Literal["truncated_gaussian", "zero"] = Field(
        default="truncated_gaussian", description="플랜트 외란 모델"
    )
    terminal_design_W: Optional[PolytopeSpec] = Field(
        default=None, description="터미널 집합을 이 W 로 미리 계산해 고정"
    )
    events: list[Event] = Field(default_factory=list)

    @model_validator(mode="after")
    def _consistency(self):
        n_x = len(self.system.A)
        n_u = len(self.system.B[0]) if self.system.B else 0
        if len(self.x0) != n_x or len(self.config.x_ref) != n_x:
            raise ValueError("x0 / x_ref 차원이 n_x 와 다릅니다.")
        if len(self.config.u_ref) != n_u or self.U.dim != n_u:
            raise ValueError("u_ref / U 차원이 n_u 와 다릅니다.")
        if self.X_P.dim != n_x:
            raise ValueError("X_P 차원이 n_x 와 다릅니다.")
        for event in self.events:
            if event.t >= self.steps:
                raise ValueError(f"이벤트 시각 t={event.t} 가 [0, {self.steps}) 밖입니다.")
            if isinstance(event, UnmodeledDisturbance) and len(event.w_extra) != n_x:
                raise ValueError("w_extra 차원이 n_w 와 다릅니다.")
        return self

    def to_inputs(self) -> ProblemInputs:
        return ProblemInputs(
            self.system.to_system(),
            self.config.to_config(),
            self.X_P.to_polytope(),
            self.U.to_polytope(),
        )


def builtin_dcdc_scenario() -> Scenario:
    """
    DC-DC 컨버터 (출력 전압 3.3 V 안정화, 입력은 트랜지스터 duty cycle).
    x0 = (2.4, 4.0) 은 x_ref 기준 1.5·X_P 안, X_C1 밖의 점이다. 어떤 허용 입력으로도
    예측 평균 x₂ 가 구간 내내 X_C1 위쪽에 머물러 첫 스텝 위반 확률 근사가 1 에 가깝다.
    t = 50 의 비모델 외란 w_extra = (0, 3.0) 은 상태를 X_C1 밖으로 밀어내도록 고른 값이다.
    """
    return Scenario(
        name="dcdc",
        system=SystemSpec(
            A=[[0.99, -0.02], [0.21, 0.92]],
            B=[[0.30], [0.06]],
            G=[[0.02, 0.00], [0.01, 0.19]],
            sigma_w=[[0.2, 0.0], [0.0, 0.2]],
            W=PolytopeSpec.from_box([-0.2, -0.2], [0.2, 0.2]),
        ),
        config=ConfigSpec(
            N=10,
            Q=[[1.0, 0.0], [0.0, 5.0]],
            R=[[1.0]],
            x_ref=[1.06, 3.30],
            u_ref=[0.28],
            dt=0.1,
        ),
        X_P=PolytopeSpec.from_box([0.0, 2.8], [2.0, 3.8]),
        U=PolytopeSpec.from_box([0.0], [1.0]),
        x0=[2.4, 4.0],
        steps=100,
        seed=7,
        method="qp",
        events=[UnmodeledDisturbance(t=50, w_extra=[0.0, 3.0])],
    )


def _field_path(error: ValidationError) -> str:
    first = error.errors()[0]
    return ".".join(str(part) for part in first.get("loc", ())) or "<root>"


def parse_scenario(data: dict) -> Scenario:
    """dict → Scenario. 스키마 위반과 가정 위반(1, 2, 4, 5)을 구분해 던진다."""
    try:
        scenario = Scenario.model_validate(data)
    except ValidationError as e:
        field = _field_path(e)
        raise SchemaViolationError(f"시나리오 스키마 위반 ({field}): {e.errors()[0]['msg']}", field=field) from e
    try:
        inputs = scenario.to_inputs()
    except RejectedInputError as e:
        raise SchemaViolationError(f"시나리오를 문제로 만들 수 없습니다: {e.message}") from e
    report = screen_assumptions(inputs)
    if not report.passed:
        raise AssumptionError(
            f"시나리오가 가정 {report.failed} 을(를) 만족하지 않습니다.", failed=report.failed, report=report
        )
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioParseError(f"시나리오 파일을 읽을 수 없습니다: {path} ({e})") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(f"JSON 파싱 실패: {path} (line {e.lineno}, col {e.colno})") from e
    if not isinstance(data, dict):
        raise ScenarioParseError("시나리오 문서의 최상위는 객체여야 합니다.")
    return parse_scenario(data)


def dump_scenario(scenario: Scenario, path: str | Path):
    Path(path).write_text(scenario.model_dump_json(indent=2), encoding="utf-8")


BUILTIN_SCENARIOS = {"dcdc": builtin_dcdc_scenario}


def builtin_scenario(name: str) -> Scenario:
    try:
        return BUILTIN_SCENARIOS[name]()
    except KeyError:
        raise ScenarioParseError(f"알 수 없는 내장 시나리오입니다: {name} (가능: {', '.join(BUILTIN_SCENARIOS)})")


def with_overrides(scenario: Scenario, **overrides) -> Scenario:
    """
    None 이 아닌 값만 덮어쓰고 다시 검증한다 (steps, seed, method, mc_samples, mc_report 등).
    steps 만 줄이고 events 를 주지 않으면 새 길이 밖의 이벤트는 뺀다.
    """
    updates = {k: v for k, v in overrides.items() if v is not None}
    if not updates:
        return scenario
    if isinstance(updates.get("steps"), int) and "events" not in updates:
        kept = [e for e in scenario.events if e.t < updates["steps"]]
        if len(kept) != len(scenario.events):
            sim_logger.info(f"[{scenario.name}] T={updates['steps']} 밖의 이벤트 {len(scenario.events) - len(kept)}개 제외")
            updates["events"] = [e.model_dump() for e in kept]
    try:
        return Scenario.model_validate({**scenario.model_dump(), **updates})
    except ValidationError as e:
        field = _field_path(e)
        raise SchemaViolationError(f"시나리오 옵션 위반 ({field}): {e.errors()[0]['msg']}", field=field) from e
