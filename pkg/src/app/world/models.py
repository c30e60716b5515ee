"""
파티클 푸시 월드 도메인 모델
"""

import json
from enum import Enum
from typing import Any, Dict, List, Tuple

import numpy as np
from pydantic import Field, field_validator, model_validator

from src.common.schema import StrictModel

# FactoredState: (n_objects + 1, entity_dim) float64 배열, 0번 행이 에이전트
FactoredState = np.ndarray
# ActionVec: (entity_dim,) float64 배열
ActionVec = np.ndarray

Position = Tuple[float, float]


class Regime(str, Enum):
    ID = "ID"
    OOD = "OOD"


def _maybe_json(v: Any) -> Any:
    # INI 설정 파일에서는 리스트/딕셔너리가 JSON 문자열로 들어온다
    if isinstance(v, str):
        return json.loads(v)
    return v


class WorldConfig(StrictModel):
    """월드 설정"""
    n_objects: int = Field(4, ge=1)
    arena_half_extent: float = Field(1.0, gt=0)
    interact_radius: float = Field(0.1, gt=0)
    max_action_step: float = Field(0.05, gt=0)
    noise_std: float = Field(0.0, ge=0)
    entity_dim: int = Field(2, ge=2, le=2)

    @property
    def n_entities(self) -> int:
        return self.n_objects + 1

    @property
    def state_shape(self) -> Tuple[int, int]:
        return (self.n_entities, self.entity_dim)


class TaskSpec(StrictModel):
    """태스크 정의 (목표 엔티티, 목표 위치, 스퓨리어스 상관 규칙)"""
    task_id: str = "task"
    goal_entities: List[int] = Field(default_factory=list)
    goal_positions: List[Position] = Field(default_factory=list)
    success_radius: float = Field(0.05, gt=0)
    # 오브젝트 인덱스 -> ID 레짐 고정 위치
    nuisance_rule: Dict[int, Position] = Field(default_factory=dict)
    ood_randomize: List[int] = Field(default_factory=list)
    # OOD 에서 ood_randomize 오브젝트를 무작위로 둘 확률 (나머지는 ID 배치 유지)
    ood_randomize_prob: float = Field(1.0, ge=0.0, le=1.0)

    @field_validator("goal_entities", "goal_positions", "nuisance_rule", "ood_randomize", mode="before")
    @classmethod
    def parse_json_value(cls, v):
        return _maybe_json(v)

    @model_validator(mode="after")
    def check_goal_lengths(self):
        if len(self.goal_entities) != len(self.goal_positions):
            raise ValueError("goal_entities 와 goal_positions 의 길이가 다릅니다")
        if len(set(self.goal_entities)) != len(self.goal_entities):
            raise ValueError("goal_entities 에 중복된 인덱스가 있습니다")
        return self

    def goal_array(self) -> np.ndarray:
        return np.asarray(self.goal_positions, dtype=np.float64).reshape(len(self.goal_entities), 2)
