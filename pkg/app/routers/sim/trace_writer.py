"""
Trace Writer Module
SimulationTrace 를 CSV / JSON / Parquet 으로 저장한다.
부동소수점은 모두 왕복 가능한 정밀도(17 유효숫자, repr)로 쓴다.
"""

import json
from pathlib import Path
from typing import Literal

from app.common.logger import sim_logger
from app.routers.sim.closed_loop import SimulationTrace

TraceFormat = Literal["csv", "json", "parquet"]
FORMATS: tuple[str, ...] = ("csv", "json", "parquet")


def write_trace(trace: SimulationTrace, path: str | Path, fmt: TraceFormat = "csv") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        trace.to_frame().to_csv(path, index=False, float_format="%.17g")
    elif fmt == "json":
        # json 모듈은 float 를 repr 로 쓰므로 그대로 왕복된다
        path.write_text(json.dumps(trace.to_dict(), ensure_ascii=False, indent=2), encoding="utf-8")
    elif fmt == "parquet":
        trace.to_frame().to_parquet(path, engine="pyarrow", index=False)
    else:
        raise ValueError(f"지원하지 않는 형식입니다: {fmt} (가능: {', '.join(FORMATS)})")
    sim_logger.info(f"📝 트레이스 저장 완료: {path} ({fmt}, {len(trace)} 스텝)")
    return path


def export_sets(trace: SimulationTrace, path: str | Path) -> Path:
    """X_P, X_f, X_C1 정점을 JSON 으로 저장 (그림용)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(trace.sets, indent=2), encoding="utf-8")
    sim_logger.info(f"📝 집합 정점 저장 완료: {path}")
    return path
