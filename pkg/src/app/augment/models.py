"""
반사실 증강 도메인 모델
"""

from typing import Dict, Iterable, List, Literal, Optional

import numpy as np
from pydantic import Field, field_validator

from src.app.dataio.models import AugmentationInfo, Trajectory, WindowRef
from src.common.schema import ArrayModel, StrictModel


class UncontrollableSet(StrictModel):
    """C^j <= theta 인 오브젝트 인덱스 (에이전트는 포함하지 않는다)"""
    entities: List[int] = Field(default_factory=list)
    theta: float = Field(0.0, ge=0.0)
    kappa: int = Field(1, ge=1)

    @field_validator("entities")
    @classmethod
    def sort_entities(cls, v):
        return sorted(set(v))

    def __contains__(self, j: int) -> bool:
        return j in self.entities

    def __len__(self) -> int:
        return len(self.entities)

    def __iter__(self):
        return iter(self.entities)

    def is_empty(self) -> bool:
        return not self.entities

    def intersection(self, other: "UncontrollableSet | Iterable[int]") -> "UncontrollableSet":
        others = set(other.entities if isinstance(other, UncontrollableSet) else other)
        return UncontrollableSet(
            entities=[j for j in self.entities if j in others], theta=self.theta, kappa=self.kappa
        )

    def issubset(self, other: "UncontrollableSet") -> bool:
        return set(self.entities) <= set(other.entities)


class CounterfactualRecord(ArrayModel):
    """원본 윈도우에서 일부 엔티티의 상태 시퀀스를 도너 것으로 바꾼 결과"""
    method: str = "caiac"
    task_id: str
    original_behavior: str = "random"
    original_ref: WindowRef
    donor_refs: Dict[int, WindowRef] = Field(default_factory=dict)
    swapped_entities: List[int] = Field(default_factory=list)
    states: np.ndarray
    actions: np.ndarray
    goal_state: Optional[np.ndarray] = None
    # 교환할 엔티티가 없으면 원본과 같고 호출자는 건너뛴다
    skipped: bool = False
    feasible: Optional[bool] = None

    @property
    def kappa(self) -> int:
        return len(self.actions)

    def to_trajectory(self, seed: int = 0) -> Trajectory:
        return Trajectory(
            states=self.states,
            actions=self.actions,
            task_id=self.task_id,
            seed=seed,
            behavior="counterfactual",
            goal_state=self.goal_state,
            augmentation=AugmentationInfo(
                method=self.method,
                original_ref=self.original_ref,
                donor_refs=self.donor_refs,
                swapped_entities=self.swapped_entities,
                original_behavior=self.original_behavior,
            ),
        )


class WindowBatch(ArrayModel):
    """윈도우 묶음 배열: states (n, kappa+1, E, D), actions (n, kappa, D), goal_states (n, E, D)"""
    states: np.ndarray
    actions: np.ndarray
    goal_states: np.ndarray
    task_ids: List[str]
    behaviors: List[str]

    def __len__(self) -> int:
        return len(self.states)


class AugmentConfig(StrictModel):
    """[augment] 섹션"""
    theta: float = Field(0.05, ge=0.0)
    kappa: int = Field(1, ge=1)
    cf_ratio: float = Field(0.9, ge=0.0, le=1.0)
    seed: int = Field(0, ge=0)
    goal_rule: Literal["trajectory_final", "window_final"] = "trajectory_final"
    # 교환 가능한 조합을 찾기 위한 최대 재추출 횟수
    max_attempts: int = Field(1000, ge=1)
