"""
오프라인 데이터셋 도메인 모델
"""

from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import Field

from src.app.world.models import Regime, WorldConfig
from src.common.schema import ArrayModel, StrictModel
from src.config.setting import settings


class WindowRef(StrictModel):
    """데이터셋 안의 윈도우 위치 (궤적 인덱스, 시작 스텝)"""
    trajectory: int
    step: int


class AugmentationInfo(StrictModel):
    """반사실 궤적의 출처 기록"""
    method: str = "caiac"
    original_ref: WindowRef
    donor_refs: Dict[int, WindowRef] = Field(default_factory=dict)
    swapped_entities: List[int] = Field(default_factory=list)
    # 원본 윈도우를 만든 정책 (expert / random)
    original_behavior: str = "random"


class Trajectory(ArrayModel):
    """states (T+1, E, D), actions (T, D)"""
    states: np.ndarray
    actions: np.ndarray
    task_id: str
    regime: Regime = Regime.ID
    seed: int
    behavior: Literal["expert", "random", "counterfactual"] = "random"
    # 목표 추출 기준 상태 (없으면 마지막 상태). 윈도우는 원본 궤적의 마지막 상태를 가리킨다
    goal_state: Optional[np.ndarray] = None
    augmentation: Optional[AugmentationInfo] = None

    def model_post_init(self, __context) -> None:
        if len(self.states) != len(self.actions) + 1:
            raise ValueError(f"len(states)={len(self.states)} != len(actions)+1={len(self.actions) + 1}")

    @property
    def horizon(self) -> int:
        return len(self.actions)

    def final_goal_state(self) -> np.ndarray:
        return self.states[-1] if self.goal_state is None else self.goal_state

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        same_goal = (self.goal_state is None and other.goal_state is None) or (
            self.goal_state is not None
            and other.goal_state is not None
            and np.array_equal(self.goal_state, other.goal_state)
        )
        return (
            np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and self.task_id == other.task_id
            and self.regime == other.regime
            and self.seed == other.seed
            and self.behavior == other.behavior
            and same_goal
            and self.augmentation == other.augmentation
        )


class Provenance(StrictModel):
    expert_fraction: float = Field(0.0, ge=0.0, le=1.0)
    generator_seed: int = 0
    created_by: str = settings.VERSION


class Dataset(ArrayModel):
    trajectories: List[Trajectory]
    config: WorldConfig
    provenance: Provenance = Field(default_factory=Provenance)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def n_states(self) -> int:
        return sum(len(t.states) for t in self.trajectories)

    @property
    def n_transitions(self) -> int:
        return sum(t.horizon for t in self.trajectories)

    def all_states(self) -> np.ndarray:
        return np.concatenate([t.states for t in self.trajectories], axis=0)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.config == other.config
            and self.provenance == other.provenance
            and self.trajectories == other.trajectories
        )


class SplitSpec(StrictModel):
    train_fraction: float = Field(0.9, gt=0.0, lt=1.0)
    split_seed: int = 0
