"""
Settings Module
수치 허용오차, 반복 예산, 로그 경로 등 실행 설정을 한 곳에서 관리한다.
환경 변수(CVPM_*) 또는 .env 파일로 덮어쓸 수 있다.
"""

from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="CVPM_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # 로그
    log_dir: str = Field(default="log", description="로그 루트 디렉토리")
    echo_stdout: bool = Field(default=False, description="러너 로그를 stdout 에도 출력")

    # 허용오차
    constraint_tol: float = Field(default=1e-7, description="제약 만족/멤버십 허용오차")
    lp_tol: float = Field(default=1e-9, description="LP 최적성 허용오차")
    kkt_tol: float = Field(default=1e-7, description="QP KKT 잔차 허용치")
    case_band: float = Field(default=1e-5, description="케이스 판정 경계 밴드")

    # 예산
    fm_row_budget: int = Field(default=20000, description="Fourier–Motzkin 최대 행 수")
    terminal_max_iter: int = Field(default=500, description="터미널 집합 반복 예산")
    terminal_tol: float = Field(default=1e-8, description="집합 동일성 판정 허용오차")
    dare_max_iter: int = Field(default=200, description="Riccati doubling 반복 예산")
    qp_max_iter: int = Field(default=2000, description="active-set 반복 예산")
    ridge_eps: float = Field(default=1e-9, description="특이 헤시안 정규화 크기")

    # 확률
    mc_samples: int = Field(default=10_000, description="Monte-Carlo 기본 샘플 수")
    nm_max_fev: int = Field(default=400, description="Nelder–Mead 함수 평가 예산")
    truncation_min_rate: float = Field(default=1e-4, description="절단 샘플링 최소 수락률")
    truncation_pilot: int = Field(default=2000, description="수락률 예비 배치 크기")


@lru_cache
def get_settings() -> Settings:
    return Settings()


settings = get_settings()
