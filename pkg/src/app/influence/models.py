"""
인과 행동 영향 (CAI) 도메인 모델
"""

from typing import List, Literal

import numpy as np
import pandas as pd
from pydantic import Field, field_validator, model_validator

from src.app.world.models import _maybe_json
from src.common.schema import ArrayModel, StrictModel


class DiagGaussian(ArrayModel):
    mean: np.ndarray
    variance: np.ndarray

    @model_validator(mode="after")
    def check_shapes(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.variance = np.atleast_1d(np.asarray(self.variance, dtype=np.float64))
        if self.mean.shape != self.variance.shape:
            raise ValueError(f"mean {self.mean.shape} / variance {self.variance.shape} 길이 불일치")
        if np.any(self.variance <= 0):
            raise ValueError("variance 는 양수여야 합니다")
        return self

    @property
    def dim(self) -> int:
        return len(self.mean)


class GaussianMixture(ArrayModel):
    """균등 가중치 대각 가우시안 혼합"""
    components: List[DiagGaussian]

    @property
    def k(self) -> int:
        return len(self.components)

    def stacked(self):
        return (
            np.stack([c.mean for c in self.components]),
            np.stack([c.variance for c in self.components]),
        )


class InfluenceScores(ArrayModel):
    """상태별/엔티티별 점수 C^j(s) (nats)

    scores: (전체 상태 수, E), 궤적 순서대로 이어붙임. lengths[i] 는 i번째 궤적의 상태 수.
    """
    scores: np.ndarray
    lengths: List[int]
    action_sample_count: int = 64
    scorer_id: Literal["cai", "oracle_distance"] = "cai"

    @model_validator(mode="after")
    def check_scores(self):
        if self.scores.ndim != 2 or len(self.scores) != sum(self.lengths):
            raise ValueError(f"scores {self.scores.shape} 와 lengths 합 {sum(self.lengths)} 불일치")
        if np.any(self.scores < 0):
            raise ValueError("scores 는 음수가 될 수 없습니다")
        return self

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def n_entities(self) -> int:
        return self.scores.shape[1]

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.lengths)]).astype(int)

    def for_trajectory(self, index: int) -> np.ndarray:
        start, stop = self.offsets[index], self.offsets[index + 1]
        return self.scores[start:stop]

    def subset(self, indices: List[int]) -> "InfluenceScores":
        """궤적 인덱스 순서대로 부분 점수"""
        blocks = [self.for_trajectory(i) for i in indices]
        return InfluenceScores(
            scores=np.concatenate(blocks, axis=0) if blocks else np.zeros((0, self.n_entities)),
            lengths=[self.lengths[i] for i in indices],
            action_sample_count=self.action_sample_count,
            scorer_id=self.scorer_id,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, InfluenceScores):
            return NotImplemented
        return (
            np.array_equal(self.scores, other.scores)
            and self.lengths == other.lengths
            and self.action_sample_count == other.action_sample_count
            and self.scorer_id == other.scorer_id
        )


class RocReport(ArrayModel):
    """오브젝트 엔티티 기준 ROC (양성 = 에이전트의 영향을 받음)"""
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float
    n_positive: int
    n_negative: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"threshold": self.thresholds, "tpr": self.tpr, "fpr": self.fpr})


class InfluenceConfig(StrictModel):
    """[influence] 섹션"""
    k: int = Field(64, ge=2)
    theta: float | None = Field(None, ge=0.0)
    # theta 가 없을 때 ROC 에서 선택한 값을 쓴다
    sweep: List[float] = Field(default_factory=lambda: [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0])
    heldout_trajectories: int = Field(10, ge=1)
    chunk_size: int = Field(64, ge=1)

    @field_validator("sweep", mode="before")
    @classmethod
    def parse_sweep(cls, v):
        return _maybe_json(v)
