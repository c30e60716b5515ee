from pydantic import BaseModel, ConfigDict


# NOTE: 모든 도메인 모델의 공통 설정 (알 수 없는 필드는 거부)
class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# NOTE: numpy 배열을 필드로 갖는 모델
class ArrayModel(BaseModel):
    model_config = ConfigDict(extra="forbid", arbitrary_types_allowed=True)
