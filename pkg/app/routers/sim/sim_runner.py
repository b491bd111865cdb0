import time
import traceback

from app.common.errors import CvpmError
from app.common.logger import sim_logger
from app.cvpm.controller import validate_assumptions
from app.routers.sim.closed_loop import run_closed_loop
from app.routers.sim.scenario import builtin_scenario, parse_scenario, with_overrides


def _resolve_scenario(body: dict):
    if body.get("scenario"):
        scenario = parse_scenario(body["scenario"])
    else:
        scenario = builtin_scenario(body.get("builtin") or "dcdc")
    return with_overrides(
        scenario,
        steps=body.get("steps"),
        seed=body.get("seed"),
        method=body.get("method"),
        mc_samples=body.get("mc_samples"),
        mc_report=body.get("mc_report"),
    )


def main(body: dict):
    """폐루프 시뮬레이션 실행"""
    try:
        scenario = _resolve_scenario(body)
        started = time.time()
        trace = run_closed_loop(scenario)
        elapsed = time.time() - started
        sim_logger.info(f"[{scenario.name}] 실행 완료 ({elapsed:.2f}s)")

        result = {
            "code": 200,
            "message": "시뮬레이션 완료",
            "summary": trace.summary(),
            "elapsed_sec": round(elapsed, 3),
        }
        if body.get("include_trace", True):
            result["trace"] = trace.to_dict()
        return result

    except CvpmError as e:
        sim_logger.error(f"CVPM 에러: {e}")
        return e.to_dict()
    except Exception as e:
        sim_logger.error(f"예상치 못한 에러: {traceback.format_exc()}")
        return {
            "code": 500,
            "message": f"알 수 없는 내부 서버 오류: {str(e)}",
        }


def validate(body: dict):
    """가정 1–6 전체 검증 (터미널 집합 계산 포함)"""
    try:
        scenario = _resolve_scenario(body)
        report = validate_assumptions(scenario.to_inputs())
        return {
            "code": 200 if report.passed else 409,
            "message": "모든 가정 통과" if report.passed else f"가정 {report.failed} 위반",
            "report": report.to_dict(),
        }

    except CvpmError as e:
        sim_logger.error(f"CVPM 에러: {e}")
        return e.to_dict()
    except Exception as e:
        sim_logger.error(f"예상치 못한 에러: {traceback.format_exc()}")
        return {
            "code": 500,
            "message": f"알 수 없는 내부 서버 오류: {str(e)}",
        }
