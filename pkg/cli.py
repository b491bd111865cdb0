"""
CVPM-MPC 시뮬레이터 CLI

    python cli.py run --builtin dcdc --out trace.csv
    python cli.py run --config scenario.json --method montecarlo --format parquet --out trace.parquet
    python cli.py validate --config scenario.json

종료 코드: 0 성공, 1 입출력/예상치 못한 오류, 2 입력·시나리오·가정 위반, 3 수치/일관성 실패
"""

import argparse
import json
import sys
import traceback

from app.common.errors import (
    AssumptionError,
    CvpmError,
    PathologicalTruncationError,
    RejectedInputError,
    ScenarioError,
)
from app.common.logger import main_logger
from app.common.settings import settings
from app.cvpm.controller import validate_assumptions
from app.routers.sim.closed_loop import run_closed_loop
from app.routers.sim.scenario import BUILTIN_SCENARIOS, builtin_scenario, load_scenario, with_overrides
from app.routers.sim.trace_writer import FORMATS, export_sets, write_trace

EXIT_OK = 0
EXIT_IO = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3

_INPUT_ERRORS = (AssumptionError, ScenarioError, RejectedInputError, PathologicalTruncationError)


def exit_code_for(error: Exception) -> int:
    if isinstance(error, _INPUT_ERRORS):
        return EXIT_INPUT
    if isinstance(error, CvpmError):
        return EXIT_NUMERIC
    return EXIT_IO


def _add_source(parser: argparse.ArgumentParser):
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="시나리오 JSON 파일 경로")
    source.add_argument("--builtin", choices=sorted(BUILTIN_SCENARIOS), help="내장 시나리오")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvpm", description="CVPM-MPC 폐루프 시뮬레이터")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="폐루프 시뮬레이션 실행")
    _add_source(run)
    run.add_argument("--steps", type=int, help="시뮬레이션 길이 T")
    run.add_argument("--seed", type=int, help="난수 seed")
    run.add_argument("--method", choices=["qp", "montecarlo"], help="Case-2 풀이 방식")
    run.add_argument("--mc-samples", type=int, help="Monte-Carlo 표본 수")
    run.add_argument("--mc-report", action="store_true", default=None, help="스텝별 Monte-Carlo 위반 추정 기록")
    run.add_argument("--out", help="트레이스 저장 경로 (생략하면 요약만 출력)")
    run.add_argument("--format", choices=FORMATS, default="csv", help="트레이스 형식")
    run.add_argument("--export-sets", help="X_P, X_f, X_C1 정점 JSON 저장 경로")
    run.add_argument("--quiet", action="store_true", help="진행 로그를 stdout 에 출력하지 않음")

    validate = sub.add_parser("validate", help="가정 1–6 검증")
    _add_source(validate)
    return parser


def _load(args):
    if args.config:
        return load_scenario(args.config)
    return builtin_scenario(args.builtin)


def _run(args) -> int:
    scenario = with_overrides(
        _load(args),
        steps=args.steps,
        seed=args.seed,
        method=args.method,
        mc_samples=args.mc_samples,
        mc_report=args.mc_report,
    )
    trace = run_closed_loop(scenario)
    if args.out:
        write_trace(trace, args.out, args.format)
    if args.export_sets:
        export_sets(trace, args.export_sets)
    print(json.dumps(trace.summary(), ensure_ascii=False, indent=2))
    return EXIT_OK


def _validate(args) -> int:
    report = validate_assumptions(_load(args).to_inputs())
    print(json.dumps(report.to_dict(), ensure_ascii=False, indent=2))
    return EXIT_OK if report.passed else EXIT_INPUT


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    settings.echo_stdout = not getattr(args, "quiet", False)
    main_logger.info(f"CLI 실행: {args.command}", extra={"route": "cli"})
    try:
        if args.command == "run":
            return _run(args)
        return _validate(args)
    except CvpmError as e:
        main_logger.error(f"CLI 실패: {e}", extra={"route": "cli"})
        print(json.dumps(e.to_dict(), ensure_ascii=False), file=sys.stderr)
        return exit_code_for(e)
    except OSError as e:
        main_logger.error(f"입출력 실패: {e}", extra={"route": "cli"})
        print(f"입출력 실패: {e}", file=sys.stderr)
        return EXIT_IO
    except Exception as e:
        main_logger.error(f"예상치 못한 에러: {traceback.format_exc()}", extra={"route": "cli"})
        print(f"알 수 없는 오류: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
