from typing import Literal, Optional

from fastapi import APIRouter
from pydantic import BaseModel, Field
from starlette.concurrency import run_in_threadpool

from app.common.errors import ScenarioError
from app.routers.sim import sim_runner
from app.routers.sim.scenario import BUILTIN_SCENARIOS, builtin_scenario

router = APIRouter(prefix="/api/sim", tags=["sim"])


class SimRunBody(BaseModel):
    scenario: Optional[dict] = Field(
        default=None,
        description="시나리오 문서 (생략하면 builtin 시나리오 사용)",
    )
    builtin: Literal["dcdc"] = Field(default="dcdc", description="내장 시나리오 이름")
    steps: Optional[int] = Field(default=None, ge=1, description="시뮬레이션 길이 T")
    seed: Optional[int] = Field(default=None, ge=0, description="난수 seed")
    method: Optional[Literal["qp", "montecarlo"]] = Field(default=None, description="Case-2 풀이 방식")
    mc_samples: Optional[int] = Field(default=None, ge=100, description="Monte-Carlo 표본 수")
    mc_report: Optional[bool] = Field(default=None, description="스텝별 Monte-Carlo 위반 추정 기록")
    include_trace: bool = Field(default=True, description="응답에 스텝별 트레이스 포함")


class SimValidateBody(BaseModel):
    scenario: Optional[dict] = Field(default=None, description="시나리오 문서")
    builtin: Literal["dcdc"] = Field(default="dcdc", description="내장 시나리오 이름")


@router.post(
    "/run",
    summary="폐루프 시뮬레이션 실행",
    description="시나리오를 T 스텝 실행하고 스텝별 케이스, 입력, 위반 확률을 돌려줍니다.",
)
async def run_simulation(body: SimRunBody):
    result = await run_in_threadpool(sim_runner.main, body.model_dump())
    return result


@router.post(
    "/validate",
    summary="가정 검증",
    description="시나리오가 가정 1–6 을 만족하는지 수치 근거와 함께 확인합니다.",
)
async def validate_scenario(body: SimValidateBody):
    result = await run_in_threadpool(sim_runner.validate, body.model_dump())
    return result


@router.get(
    "/builtin/{name}",
    summary="내장 시나리오 문서",
    description=f"내장 시나리오 JSON 을 돌려줍니다. (가능: {', '.join(BUILTIN_SCENARIOS)})",
)
def get_builtin(name: str):
    try:
        return builtin_scenario(name).model_dump()
    except ScenarioError as e:
        return {"code": 404, "message": e.message}
