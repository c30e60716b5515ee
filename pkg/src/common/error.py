import logging
import traceback
from typing import Any, Dict


class ErrorCode:
    class Common:
        INVALID_CONFIG = (
            "C002",
            "설정값이 올바르지 않습니다.",
            "알 수 없는 키, 범위를 벗어난 값 등 설정 검증 실패",
        )
        ARTIFACT_MISSING = (
            "C003",
            "필요한 입력 파일이 없습니다.",
            "이전 단계의 산출물이 존재하지 않는 경우",
        )

    class World:
        TASK_CONFLICT = (
            "W001",
            "태스크 설정이 월드 설정과 충돌합니다.",
            "존재하지 않는 오브젝트 인덱스, 경기장 밖의 고정 위치 등",
        )
        INVALID_STATE = (
            "W002",
            "상태 배열의 형태가 올바르지 않습니다.",
            "엔티티 수/차원이 WorldConfig 와 다른 경우",
        )

    class Dataset:
        PARSE_ERROR = (
            "D001",
            "데이터셋 파일을 해석할 수 없습니다.",
            "JSONL 줄이 손상되었거나 잘린 경우",
        )
        SCHEMA_ERROR = (
            "D002",
            "데이터셋 스키마가 헤더와 일치하지 않습니다.",
            "entity_dims 또는 상태/행동 길이 불일치",
        )
        TOO_SMALL = (
            "D003",
            "데이터셋의 궤적 수가 부족합니다.",
            "분할에 최소 2개 궤적이 필요한 경우",
        )

    class Model:
        SHAPE_MISMATCH = (
            "M001",
            "파라미터 형태가 일치하지 않습니다.",
            "그래디언트/모멘트/체크포인트 형태 불일치",
        )
        NON_FINITE_INPUT = (
            "M002",
            "유한하지 않은 입력값입니다.",
            "NaN 또는 inf 가 포함된 입력",
        )
        DIVERGED = (
            "M003",
            "학습이 발산했습니다.",
            "손실값이 유한하지 않은 경우",
        )
        GRADIENT_CHECK_FAILED = (
            "M004",
            "그래디언트 검증에 실패했습니다.",
            "해석적 그래디언트와 수치 미분의 상대 오차가 허용치 이상",
        )

    class Influence:
        EMPTY_MIXTURE = (
            "I001",
            "혼합 분포에 성분이 없습니다.",
            "K = 0 인 가우시안 혼합",
        )
        DIMENSION_MISMATCH = (
            "I002",
            "분포의 차원이 일치하지 않습니다.",
            "KL 계산 시 평균/분산 길이 불일치",
        )
        SINGLE_CLASS = (
            "I003",
            "ROC 분석에는 양/음성 레이블이 모두 필요합니다.",
            "레이블이 한 종류뿐인 경우",
        )

    class Augment:
        LAYOUT_MISMATCH = (
            "A001",
            "원본과 도너의 레이아웃이 다릅니다.",
            "윈도우 길이 또는 엔티티 구성 불일치",
        )
        NOT_ENOUGH_SCORES = (
            "A002",
            "윈도우 길이만큼의 점수가 없습니다.",
            "kappa 보다 적은 점수 벡터",
        )
        NO_SWAPPABLE = (
            "A003",
            "교환 가능한 윈도우가 없습니다.",
            "모든 윈도우의 uncontrollable set 이 비어 있는 경우",
        )

    class Policy:
        EMPTY_STREAM = (
            "P001",
            "학습 샘플이 없습니다.",
            "행동 복제 학습 스트림이 비어 있는 경우",
        )
        DIVERGED = (
            "P002",
            "정책 학습이 발산했습니다.",
            "MSE 손실이 유한하지 않은 경우",
        )

    class Eval:
        RECORD_MISMATCH = (
            "E001",
            "레코드와 월드 설정이 일치하지 않습니다.",
            "엔티티 수나 행동 길이가 맞지 않는 경우",
        )
        TOO_MANY_OBJECTS = (
            "E002",
            "오브젝트 수가 너무 많아 지지 집합 표를 만들 수 없습니다.",
            "N > 20 (스케치 모드는 지원하지 않음)",
        )


class CaiacError(Exception):
    status: str = "error"
    code: str
    message: str
    data: Dict[str, Any] | None | str = {}

    def __init__(
        self,
        code: str,
        message: str,
        data: Dict[str, Any] | None | str = {},
    ) -> None:
        super().__init__(f"[{code}] {message} {data or ''}".strip())
        self.code: str = code
        self.message: str = message
        self.data: Dict[str, Any] | None | str = data

    @classmethod
    def of(cls, error_code: tuple, **kwargs: Any) -> "CaiacError":
        return cls(code=error_code[0], message=error_code[1], data=kwargs)


# CLI 종료 코드 1 (검증 실패)
class ConfigError(CaiacError):
    pass

class SchemaError(CaiacError):
    pass

class ArtifactMissingError(CaiacError):
    pass

class ParseError(CaiacError):
    def __init__(self, code: str, message: str, data: Dict[str, Any] | None | str = {}) -> None:
        super().__init__(code, message, data)
        self.line: int | None = data.get("line") if isinstance(data, dict) else None


# CLI 종료 코드 2 (실행 실패)
class ShapeError(CaiacError):
    pass

class DivergenceError(CaiacError):
    pass

class GradientCheckError(CaiacError):
    pass

class InfluenceError(CaiacError):
    pass

class AugmentError(CaiacError):
    pass

class EvalError(CaiacError):
    pass


VALIDATION_ERRORS = (ConfigError, SchemaError, ArtifactMissingError, ParseError)


def log_runtime_error(e: Exception, logger: logging.Logger) -> None:
    traceback_lines = traceback.format_exc().splitlines()
    logger.error(
        f"""
            error: {e.__class__.__name__} {str(e)}
            traceback: {chr(10).join(traceback_lines[-10:])}
        """
    )
