"""
실행 설정 (RunConfig) 모델

INI 파일의 [section] 하나가 모델 하나에 대응한다. 모르는 키는 extra="forbid" 로 거부된다.
"""

from typing import List

from pydantic import Field, field_validator

from src.app.augment.models import AugmentConfig
from src.app.evalharness.models import EvalConfig
from src.app.influence.models import InfluenceConfig
from src.app.neural.models import ModelConfig
from src.app.policy.models import PolicyConfig
from src.app.world.models import TaskSpec, WorldConfig
from src.common.schema import StrictModel
from src.config.setting import settings


class RunSection(StrictModel):
    seed: int = Field(0, ge=0)
    out_dir: str = "runs/default"
    jobs: int = Field(settings.JOBS, ge=1)


class DatasetSection(StrictModel):
    n_trajectories: int = Field(200, ge=2)
    horizon: int = Field(100, ge=1)
    expert_fraction: float = Field(0.3, ge=0.0, le=1.0)


class AugmentSection(StrictModel):
    """theta 는 [influence] 에서, seed 는 [run] seed 에서 온다"""
    kappa: int = Field(1, ge=1)
    cf_ratio: float = Field(0.9, ge=0.0, le=1.0)
    goal_rule: str = "trajectory_final"
    max_attempts: int = Field(1000, ge=1)

    @field_validator("goal_rule")
    @classmethod
    def check_goal_rule(cls, v):
        if v not in ("trajectory_final", "window_final"):
            raise ValueError(f"goal_rule must be trajectory_final or window_final: {v}")
        return v

    def to_config(self, theta: float, seed: int) -> AugmentConfig:
        return AugmentConfig(theta=theta, seed=seed, **self.model_dump())


def default_tasks() -> List[TaskSpec]:
    """두 태스크 모두 목표 오브젝트를 원점에 두고 (에이전트가 잡은 상태로 시작)
    오브젝트 3, 4 를 태스크마다 다른 구석에 고정한다. OOD 에서는 3, 4 를 풀어준다."""
    return [
        TaskSpec(
            task_id="a",
            goal_entities=[1],
            goal_positions=[(-0.5, 0.5)],
            nuisance_rule={1: (0.0, 0.0), 3: (0.8, 0.8), 4: (0.8, -0.8)},
            ood_randomize=[3, 4],
        ),
        TaskSpec(
            task_id="b",
            goal_entities=[2],
            goal_positions=[(0.5, -0.5)],
            nuisance_rule={2: (0.0, 0.0), 3: (-0.8, -0.8), 4: (-0.8, 0.8)},
            ood_randomize=[3, 4],
        ),
    ]


class RunConfig(StrictModel):
    run: RunSection = Field(default_factory=RunSection)
    world: WorldConfig = Field(default_factory=WorldConfig)
    tasks: List[TaskSpec] = Field(default_factory=default_tasks, min_length=1)
    dataset: DatasetSection = Field(default_factory=DatasetSection)
    model: ModelConfig = Field(default_factory=ModelConfig)
    influence: InfluenceConfig = Field(default_factory=InfluenceConfig)
    augment: AugmentSection = Field(default_factory=AugmentSection)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)

    @field_validator("tasks")
    @classmethod
    def unique_task_ids(cls, v):
        ids = [t.task_id for t in v]
        if len(set(ids)) != len(ids):
            raise ValueError(f"task_id 가 중복되었습니다: {ids}")
        return v

    def hashable(self) -> dict:
        """결과에 영향을 주지 않는 out_dir, jobs 는 해시에서 제외"""
        data = self.model_dump(mode="json")
        data["run"] = {"seed": self.run.seed}
        return data
