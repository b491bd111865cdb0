class CvpmError(Exception):
    """CVPM 계산 중 발생하는 주요 에러의 공통 부모."""

    default_code = 500

    def __init__(self, message: str, code: int | None = None):
        super().__init__(message)
        self.code = code if code is not None else self.default_code
        self.message = message

    def __str__(self):
        return f"[Code {self.code}] {self.message}"

    def to_dict(self):
        """에러를 dict 형태로 반환"""
        return {"code": self.code, "message": self.message}


class RejectedInputError(CvpmError):
    """차원 불일치, 퇴화된 박스 등 입력 자체가 잘못된 경우."""

    default_code = 400


class UnsupportedOperationError(CvpmError):
    """고차원에서 정점 기반 연산을 요청한 경우."""

    default_code = 400


class ResourceLimitError(CvpmError):
    """Fourier–Motzkin 행 폭증, 반복 예산 초과."""

    default_code = 507


class SolverError(CvpmError):
    """LP/QP/Riccati 솔버의 수치 실패. status 에 SolveStatus 를 담는다."""

    default_code = 500

    def __init__(self, message: str, code: int | None = None, status=None):
        super().__init__(message, code)
        self.status = status

    def to_dict(self):
        data = super().to_dict()
        if self.status is not None:
            data["status"] = self.status.kind
        return data


class AssumptionError(CvpmError):
    """가정(Assumption 1–6) 검증 실패. failed 에 실패한 가정 번호 목록."""

    default_code = 409

    def __init__(self, message: str, failed=None, report=None, code: int | None = None):
        super().__init__(message, code)
        self.failed = list(failed or [])
        self.report = report

    def to_dict(self):
        data = super().to_dict()
        data["failed_assumptions"] = self.failed
        if self.report is not None:
            data["report"] = self.report.to_dict()
        return data


class NoTerminalSetError(AssumptionError):
    """터미널 집합 반복이 공집합으로 수렴한 경우 (문제 자체가 부적합)."""


class ConsistencyError(CvpmError):
    """케이스 판정, QP 결과 등 내부 일관성 검사가 깨진 경우."""

    default_code = 500

    def __init__(self, message: str, step: int | None = None, code: int | None = None):
        super().__init__(message, code)
        self.step = step

    def to_dict(self):
        data = super().to_dict()
        if self.step is not None:
            data["step"] = self.step
        return data


class PathologicalTruncationError(CvpmError):
    """절단 가우시안의 수락률이 너무 낮은 경우."""

    default_code = 400


class ScenarioError(CvpmError):
    """시나리오 문서 관련 에러."""

    default_code = 422


class ScenarioParseError(ScenarioError):
    """시나리오 파일을 읽거나 파싱할 수 없음."""


class SchemaViolationError(ScenarioError):
    """시나리오 필드가 스키마를 위반함. field 에 문제 필드 경로."""

    def __init__(self, message: str, field: str | None = None, code: int | None = None):
        super().__init__(message, code)
        self.field = field

    def to_dict(self):
        data = super().to_dict()
        if self.field is not None:
            data["field"] = self.field
        return data
