"""
평가 리포트 모델
"""

from typing import Any, Dict, List, Literal, Optional

import pandas as pd
from pydantic import Field, field_validator

from src.app.world.models import _maybe_json
from src.common.constants import REPLAY_TOLERANCE
from src.common.schema import ArrayModel, StrictModel


class FeasibilityVerdict(StrictModel):
    index: int
    passed: bool
    # exact_replay: 최대 편차, gaussian_loglik: 로그우도
    value: float
    threshold: float
    swapped_entities: List[int] = Field(default_factory=list)


class FeasibilityReport(StrictModel):
    method_id: str
    mode: Literal["exact_replay", "gaussian_loglik"]
    tolerance: float
    k_sims: int = 0
    verdicts: List[FeasibilityVerdict] = Field(default_factory=list)
    quantiles: Optional[Dict[str, float]] = None
    covariance: str = "diagonal"

    @property
    def n_records(self) -> int:
        return len(self.verdicts)

    @property
    def pass_rate(self) -> float:
        if not self.verdicts:
            return 0.0
        return sum(v.passed for v in self.verdicts) / len(self.verdicts)

    def summary(self) -> Dict[str, Any]:
        return {
            "method_id": self.method_id,
            "mode": self.mode,
            "tolerance": self.tolerance,
            "k_sims": self.k_sims,
            "covariance": self.covariance,
            "n_records": self.n_records,
            "pass_rate": self.pass_rate,
            "quantiles": self.quantiles,
        }

    def detail(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "index": v.index,
                    "passed": v.passed,
                    "value": v.value,
                    "threshold": v.threshold,
                    "swapped_entities": " ".join(str(j) for j in v.swapped_entities),
                }
                for v in self.verdicts
            ],
            columns=["index", "passed", "value", "threshold", "swapped_entities"],
        )


class SupportReport(StrictModel):
    method_id: str
    n_objects: int
    n_states: int
    occupied: int
    maximum: int

    @property
    def ratio(self) -> float:
        return self.occupied / self.maximum

    def summary(self) -> Dict[str, Any]:
        return {
            "method_id": self.method_id,
            "n_objects": self.n_objects,
            "n_states": self.n_states,
            "occupied": self.occupied,
            "maximum": self.maximum,
            "ratio": self.ratio,
        }


class ComparisonReport(ArrayModel):
    rows: pd.DataFrame
    feasibility: Dict[str, FeasibilityReport]
    support: Dict[str, SupportReport]

    def summary(self) -> Dict[str, Any]:
        return {
            "methods": self.rows.to_dict(orient="records"),
            "feasibility": {k: v.summary() for k, v in self.feasibility.items()},
            "support": {k: v.summary() for k, v in self.support.items()},
        }


class EvalConfig(StrictModel):
    """[eval] 섹션"""
    k_sims: int = Field(50, ge=1)
    tolerance: float = Field(REPLAY_TOLERANCE, gt=0)
    n_counterfactuals: int = Field(1000, ge=1)
    methods: List[Literal["caiac", "random_swap", "none"]] = Field(
        default_factory=lambda: ["caiac", "random_swap", "none"]
    )
    support_fractions: List[float] = Field(default_factory=lambda: [0.1, 0.25, 0.5, 1.0])

    @field_validator("methods", "support_fractions", mode="before")
    @classmethod
    def parse_json_value(cls, v):
        return _maybe_json(v)
