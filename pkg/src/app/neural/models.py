"""
피드포워드 네트워크 / 가우시안 헤드 / Adam 상태 모델
"""

from typing import Dict, List

import numpy as np
import pandas as pd
from pydantic import Field, field_validator

from src.common.schema import ArrayModel, StrictModel
from src.common.error import ErrorCode, ShapeError


class Layer(ArrayModel):
    """x @ weight + bias, weight: (fan_in, fan_out)"""
    weight: np.ndarray
    bias: np.ndarray


class MlpParams(ArrayModel):
    """ReLU 은닉층 + 이름 있는 선형 출력 헤드"""
    hidden: List[Layer]
    heads: Dict[str, Layer]

    def tensors(self) -> List[np.ndarray]:
        out = []
        for layer in self.hidden:
            out += [layer.weight, layer.bias]
        for name in self.heads:
            out += [self.heads[name].weight, self.heads[name].bias]
        return out

    def tensor_names(self) -> List[str]:
        names = []
        for i in range(len(self.hidden)):
            names += [f"hidden.{i}.weight", f"hidden.{i}.bias"]
        for name in self.heads:
            names += [f"{name}.weight", f"{name}.bias"]
        return names

    def with_tensors(self, tensors: List[np.ndarray]) -> "MlpParams":
        """같은 구조에 새 텐서를 채운 사본"""
        shapes = [t.shape for t in self.tensors()]
        if len(tensors) != len(shapes) or any(t.shape != s for t, s in zip(tensors, shapes)):
            raise ShapeError.of(ErrorCode.Model.SHAPE_MISMATCH, expected=shapes, actual=[np.shape(t) for t in tensors])
        it = iter(tensors)
        hidden = [Layer(weight=next(it), bias=next(it)) for _ in self.hidden]
        heads = {name: Layer(weight=next(it), bias=next(it)) for name in self.heads}
        return MlpParams(hidden=hidden, heads=heads)

    def copy(self) -> "MlpParams":
        return self.with_tensors([t.copy() for t in self.tensors()])

    @property
    def input_dim(self) -> int:
        return self.hidden[0].weight.shape[0] if self.hidden else next(iter(self.heads.values())).weight.shape[0]

    @property
    def hidden_sizes(self) -> List[int]:
        return [layer.weight.shape[1] for layer in self.hidden]

    @property
    def head_dims(self) -> Dict[str, int]:
        return {name: layer.weight.shape[1] for name, layer in self.heads.items()}


class GaussianHeadOutput(ArrayModel):
    """엔티티 하나의 대각 가우시안 예측 P(S'_j | s, a)"""
    mean: np.ndarray
    variance: np.ndarray


class AdamState(ArrayModel):
    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    step: int = 0
    learning_rate: float = 8e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: MlpParams, learning_rate: float = 8e-4) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(t) for t in params.tensors()],
            second_moment=[np.zeros_like(t) for t in params.tensors()],
            learning_rate=learning_rate,
        )


class ModelConfig(StrictModel):
    """전이 모델 학습 설정 ([model] 섹션)"""
    hidden_sizes: List[int] = Field(default_factory=lambda: [64, 64])
    learning_rate: float = Field(8e-4, gt=0)
    steps: int = Field(20000, ge=1)
    batch_size: int = Field(256, ge=1)
    eval_every: int = Field(500, ge=1)
    train_fraction: float = Field(0.9, gt=0.0, lt=1.0)
    # 검증 NLL 계산에 쓰는 최대 전이 수
    val_max_transitions: int = Field(4096, ge=1)

    @field_validator("hidden_sizes", mode="before")
    @classmethod
    def parse_sizes(cls, v):
        if isinstance(v, str):
            return [int(x) for x in v.replace("[", "").replace("]", "").split(",") if x.strip()]
        return v


class TrainResult(ArrayModel):
    params: MlpParams
    curves: pd.DataFrame
    best_step: int
    best_val_loss: float
