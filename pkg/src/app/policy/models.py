"""
목표 조건부 행동 복제 정책 모델
"""

from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import Field, field_validator

from src.app.neural.models import MlpParams
from src.app.world.models import Regime, WorldConfig, _maybe_json
from src.common.schema import ArrayModel, StrictModel


class PolicyConfig(StrictModel):
    """[policy] 섹션"""
    hidden_sizes: List[int] = Field(default_factory=lambda: [64, 64])
    learning_rate: float = Field(1e-3, gt=0)
    steps: int = Field(5000, ge=1)
    batch_size: int = Field(256, ge=1)
    log_every: int = Field(500, ge=1)
    # 행동 레이블로 쓸 원본 궤적 종류
    train_behaviors: List[str] = Field(default_factory=lambda: ["expert"])
    cf_pool_size: int = Field(20000, ge=1)
    horizon: int = Field(400, ge=1)
    episodes: int = Field(50, ge=1)
    n_seeds: int = Field(10, ge=1)
    ratios: List[float] = Field(default_factory=lambda: [0.0, 0.5, 0.9, 1.0])
    n_boot: int = Field(1000, ge=1)

    @field_validator("hidden_sizes", "train_behaviors", "ratios", mode="before")
    @classmethod
    def parse_json_value(cls, v):
        return _maybe_json(v)

    @field_validator("ratios")
    @classmethod
    def check_ratios(cls, v):
        if any(not 0.0 <= r <= 1.0 for r in v):
            raise ValueError("ratios 는 [0, 1] 범위여야 합니다")
        return v


class TrainingPools(ArrayModel):
    """정책 입력 x = [평탄화된 상태, 목표 벡터], 레이블 y = 행동 / max_action_step"""
    original_x: np.ndarray
    original_y: np.ndarray
    counterfactual_x: Optional[np.ndarray] = None
    counterfactual_y: Optional[np.ndarray] = None

    @property
    def n_original(self) -> int:
        return len(self.original_x)

    @property
    def n_counterfactual(self) -> int:
        return 0 if self.counterfactual_x is None else len(self.counterfactual_x)


class BcPolicy(ArrayModel):
    params: MlpParams
    world: WorldConfig
    training: Dict[str, Any] = Field(default_factory=dict)
    curves: Optional[pd.DataFrame] = None


class EvalReport(StrictModel):
    task_id: str
    regime: Regime
    episodes: int
    horizon: int
    outcomes: List[bool]
    ci_half_width: float

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.outcomes)) if self.outcomes else 0.0

    def summary(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id,
            "regime": self.regime.value,
            "episodes": self.episodes,
            "horizon": self.horizon,
            "success_rate": self.success_rate,
            "ci_half_width": self.ci_half_width,
        }
