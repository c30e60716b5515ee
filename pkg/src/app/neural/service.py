"""
가우시안 전이 모델 P(S'_j | s, a)

numpy 로 직접 구현한 MLP (ReLU 은닉층, 평균/사전분산 헤드), 수동 역전파, Adam.
모델은 내부적으로 다음 상태의 변위 (s' - s) 를 예측하고 s 를 더해서 절대 위치 분포를 돌려준다.
"""

from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit

from src.app.dataio.models import Dataset
from src.app.dataio.service import iter_transitions
from src.app.neural.models import AdamState, GaussianHeadOutput, Layer, MlpParams, ModelConfig, TrainResult
from src.app.world.models import ActionVec, FactoredState, WorldConfig
from src.common.constants import AGENT_INDEX, VARIANCE_CEIL, VARIANCE_FLOOR
from src.common.error import DivergenceError, ErrorCode, ShapeError
from src.common.utils.logger import log_method_call, set_logger
from src.common.utils.seeding import derive_rng

logger = set_logger("neural")

LOG_2PI = float(np.log(2.0 * np.pi))
MEAN_HEAD = "mean"
VARIANCE_HEAD = "pre_variance"


# ===== 초기화 =====

def orthogonal_matrix(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """rows <= cols 이면 행이, 아니면 열이 정규직교"""
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q.T if rows < cols else q


def init_orthogonal(input_dim: int, hidden_sizes: Sequence[int], head_dims: Dict[str, int], seed: int) -> MlpParams:
    rng = derive_rng(seed, "init")
    hidden = []
    fan_in = input_dim
    for width in hidden_sizes:
        hidden.append(Layer(weight=orthogonal_matrix(fan_in, width, rng), bias=np.zeros(width)))
        fan_in = width
    heads = {
        name: Layer(weight=orthogonal_matrix(fan_in, dim, rng), bias=np.zeros(dim))
        for name, dim in head_dims.items()
    }
    return MlpParams(hidden=hidden, heads=heads)


# ===== 공통 MLP 순전파 / 역전파 =====

def mlp_forward(params: MlpParams, x: np.ndarray) -> Tuple[Dict[str, np.ndarray], List[np.ndarray]]:
    """헤드별 출력과 역전파용 캐시 (각 층의 활성값)"""
    activations = [x]
    h = x
    for layer in params.hidden:
        h = np.maximum(h @ layer.weight + layer.bias, 0.0)
        activations.append(h)
    outputs = {name: h @ layer.weight + layer.bias for name, layer in params.heads.items()}
    return outputs, activations


def mlp_backward(params: MlpParams, activations: List[np.ndarray], head_grads: Dict[str, np.ndarray]) -> MlpParams:
    """헤드 출력에 대한 그래디언트를 모든 파라미터로 역전파"""
    top = activations[-1]
    dh = np.zeros_like(top)
    head_layers = {}
    for name, layer in params.heads.items():
        g = head_grads[name]
        head_layers[name] = Layer(weight=top.T @ g, bias=g.sum(axis=0))
        dh += g @ layer.weight.T

    hidden_layers = []
    for i in range(len(params.hidden) - 1, -1, -1):
        layer = params.hidden[i]
        # ReLU 출력이 0 이면 전파하지 않는다
        dz = dh * (activations[i + 1] > 0.0)
        hidden_layers.append(Layer(weight=activations[i].T @ dz, bias=dz.sum(axis=0)))
        dh = dz @ layer.weight.T
    return MlpParams(hidden=hidden_layers[::-1], heads=head_layers)


# ===== 가우시안 전이 모델 =====

def input_dim(config: WorldConfig) -> int:
    return config.n_entities * config.entity_dim + config.entity_dim


def encode_inputs(states: np.ndarray, actions: np.ndarray, config: WorldConfig) -> np.ndarray:
    """[에이전트 위치, 에이전트 기준 오브젝트 상대 위치..., 정규화된 행동]"""
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    agent = states[:, AGENT_INDEX]
    relative = states[:, 1:] - agent[:, None, :]
    x = np.concatenate(
        [agent, relative.reshape(len(states), -1), actions / config.max_action_step], axis=1
    )
    if not np.all(np.isfinite(x)):
        raise ShapeError.of(ErrorCode.Model.NON_FINITE_INPUT)
    return x


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def head_variance(pre_variance: np.ndarray) -> np.ndarray:
    """softplus + 1e-8 하한, 이후 200 상한"""
    return np.minimum(softplus(pre_variance) + VARIANCE_FLOOR, VARIANCE_CEIL)


def _gaussian_outputs(
    params: MlpParams, states: np.ndarray, actions: np.ndarray, config: WorldConfig
) -> Tuple[np.ndarray, np.ndarray, Dict[str, np.ndarray], List[np.ndarray]]:
    states = np.asarray(states, dtype=np.float64)
    x = encode_inputs(states, actions, config)
    outputs, activations = mlp_forward(params, x)
    shape = states.shape
    means = states + config.max_action_step * outputs[MEAN_HEAD].reshape(shape)
    variances = head_variance(outputs[VARIANCE_HEAD]).reshape(shape)
    return means, variances, outputs, activations


def predict_batch(
    params: MlpParams, states: np.ndarray, actions: np.ndarray, config: WorldConfig
) -> Tuple[np.ndarray, np.ndarray]:
    """(B, E, D) 평균과 분산"""
    means, variances, _, _ = _gaussian_outputs(params, states, actions, config)
    return means, variances


def forward(params: MlpParams, state: FactoredState, action: ActionVec, config: WorldConfig) -> List[GaussianHeadOutput]:
    """엔티티별 가우시안 예측 (에이전트가 첫 번째)"""
    means, variances = predict_batch(params, np.asarray(state)[None], np.asarray(action)[None], config)
    return [GaussianHeadOutput(mean=m, variance=v) for m, v in zip(means[0], variances[0])]


def nll_loss(outputs: List[GaussianHeadOutput] | Tuple[np.ndarray, np.ndarray], targets: np.ndarray) -> float:
    """엔티티/차원 평균 음의 로그우도 0.5*[log(2*pi*var) + (x-mu)^2/var]"""
    if isinstance(outputs, tuple):
        means, variances = outputs
    else:
        means = np.stack([o.mean for o in outputs])
        variances = np.stack([o.variance for o in outputs])
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != means.shape:
        raise ShapeError.of(ErrorCode.Model.SHAPE_MISMATCH, expected=means.shape, actual=targets.shape)
    return float(np.mean(0.5 * (LOG_2PI + np.log(variances) + (targets - means) ** 2 / variances)))


def backward(
    params: MlpParams, batch: Tuple[np.ndarray, np.ndarray, np.ndarray], config: WorldConfig
) -> Tuple[float, MlpParams]:
    """배치 평균 NLL 과 모든 파라미터에 대한 그래디언트"""
    states, actions, targets = batch
    means, variances, outputs, activations = _gaussian_outputs(params, states, actions, config)
    targets = np.asarray(targets, dtype=np.float64)
    loss = float(np.mean(0.5 * (LOG_2PI + np.log(variances) + (targets - means) ** 2 / variances)))

    n = means.size
    residual = (targets - means).reshape(len(states), -1)
    var = variances.reshape(len(states), -1)
    pre = outputs[VARIANCE_HEAD]
    grad_mean = config.max_action_step * (-residual / var) / n
    unclipped = (softplus(pre) + VARIANCE_FLOOR) < VARIANCE_CEIL
    grad_pre = 0.5 * (1.0 / var - residual ** 2 / var ** 2) * expit(pre) * unclipped / n
    grads = mlp_backward(params, activations, {MEAN_HEAD: grad_mean, VARIANCE_HEAD: grad_pre})
    return loss, grads


# ===== MSE (행동 복제 헤드) =====

def mse_backward(params: MlpParams, x: np.ndarray, targets: np.ndarray, head: str) -> Tuple[float, MlpParams]:
    outputs, activations = mlp_forward(params, x)
    diff = outputs[head] - targets
    loss = float(np.mean(diff ** 2))
    grads = mlp_backward(params, activations, {head: 2.0 * diff / diff.size})
    return loss, grads


# ===== 최적화 =====

def adam_step(params: MlpParams, grads: MlpParams, state: AdamState) -> Tuple[MlpParams, AdamState]:
    """편향 보정이 있는 표준 Adam 업데이트"""
    tensors = params.tensors()
    grad_tensors = grads.tensors()
    if len(grad_tensors) != len(tensors) or any(g.shape != t.shape for g, t in zip(grad_tensors, tensors)) \
            or any(m.shape != t.shape for m, t in zip(state.first_moment, tensors)):
        raise ShapeError.of(
            ErrorCode.Model.SHAPE_MISMATCH,
            params=[t.shape for t in tensors],
            grads=[g.shape for g in grad_tensors],
        )
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    first, second, updated = [], [], []
    for p, g, m, v in zip(tensors, grad_tensors, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** step)
        v_hat = v / (1.0 - b2 ** step)
        updated.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
        first.append(m)
        second.append(v)
    new_state = state.model_copy(update={"first_moment": first, "second_moment": second, "step": step})
    return params.with_tensors(updated), new_state


# ===== 학습 =====

def _mean_nll(params: MlpParams, arrays, config: WorldConfig, chunk: int = 4096) -> float:
    states, actions, targets = arrays
    total = 0.0
    for start in range(0, len(states), chunk):
        sl = slice(start, start + chunk)
        means, variances = predict_batch(params, states[sl], actions[sl], config)
        total += nll_loss((means, variances), targets[sl]) * len(states[sl])
    return total / len(states)


@log_method_call("neural")
def train_model(train: Dataset, val: Dataset, model_config: ModelConfig, seed: int) -> TrainResult:
    """최저 검증 NLL 파라미터를 돌려준다. eval_every 마다 train/val NLL 기록"""
    if train.n_transitions == 0 or val.n_transitions == 0:
        raise ValueError("train and val sets must contain transitions")
    config = train.config
    train_arrays = iter_transitions(train)
    val_arrays = iter_transitions(val)
    if len(val_arrays[0]) > model_config.val_max_transitions:
        pick = np.sort(derive_rng(seed, "val_subset").permutation(len(val_arrays[0]))[: model_config.val_max_transitions])
        val_arrays = tuple(a[pick] for a in val_arrays)

    dim = config.n_entities * config.entity_dim
    params = init_orthogonal(
        input_dim(config), model_config.hidden_sizes, {MEAN_HEAD: dim, VARIANCE_HEAD: dim}, seed
    )
    adam = AdamState.zeros_like(params, model_config.learning_rate)
    rng = derive_rng(seed, "minibatch")
    n = len(train_arrays[0])

    init_val = _mean_nll(params, val_arrays, config)
    rows = [{"step": 0, "train_nll": _mean_nll(params, train_arrays, config) if n <= model_config.val_max_transitions else np.nan, "val_nll": init_val}]
    best_params, best_val, best_step = params.copy(), init_val, 0
    running = []
    logger.info(f"전이 모델 학습 시작: {n}개 전이, steps={model_config.steps}, 초기 val NLL={init_val:.4f}")

    for step in range(1, model_config.steps + 1):
        idx = rng.integers(0, n, size=model_config.batch_size)
        loss, grads = backward(params, tuple(a[idx] for a in train_arrays), config)
        if not np.isfinite(loss):
            raise DivergenceError.of(ErrorCode.Model.DIVERGED, step=step, loss=str(loss))
        params, adam = adam_step(params, grads, adam)
        running.append(loss)

        if step % model_config.eval_every == 0 or step == model_config.steps:
            val_nll = _mean_nll(params, val_arrays, config)
            if not np.isfinite(val_nll):
                raise DivergenceError.of(ErrorCode.Model.DIVERGED, step=step, val_nll=str(val_nll))
            rows.append({"step": step, "train_nll": float(np.mean(running)), "val_nll": val_nll})
            running = []
            if val_nll < best_val:
                best_params, best_val, best_step = params.copy(), val_nll, step
            logger.info(f"step {step}: train NLL={rows[-1]['train_nll']:.4f}, val NLL={val_nll:.4f}")

    return TrainResult(
        params=best_params,
        curves=pd.DataFrame(rows, columns=["step", "train_nll", "val_nll"]),
        best_step=best_step,
        best_val_loss=best_val,
    )


# ===== 그래디언트 검증 =====

def numerical_gradient(loss_fn, params: MlpParams, h: float = 1e-5) -> List[np.ndarray]:
    """중앙 차분 수치 그래디언트"""
    tensors = [t.copy() for t in params.tensors()]
    grads = []
    for k, tensor in enumerate(tensors):
        g = np.zeros_like(tensor)
        for idx in np.ndindex(tensor.shape):
            original = tensor[idx]
            tensor[idx] = original + h
            plus = loss_fn(params.with_tensors(tensors))
            tensor[idx] = original - h
            minus = loss_fn(params.with_tensors(tensors))
            tensor[idx] = original
            g[idx] = (plus - minus) / (2.0 * h)
        grads.append(g)
    return grads


def relative_errors(analytic: List[np.ndarray], numeric: List[np.ndarray]) -> List[float]:
    """텐서별 ||a - n|| / (||a|| + ||n||)"""
    errors = []
    for a, n in zip(analytic, numeric):
        denom = max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12)
        errors.append(float(np.linalg.norm(a - n) / denom))
    return errors


def gradient_check(seed: int = 0, batch_size: int = 4, hidden_sizes: Sequence[int] = (8, 8), h: float = 1e-5) -> Dict[str, float]:
    """3-엔티티 토이 배치에서 해석적 그래디언트와 중앙 차분 비교"""
    config = WorldConfig(n_objects=2)
    rng = derive_rng(seed, "gradcheck")
    dim = config.n_entities * config.entity_dim
    params = init_orthogonal(input_dim(config), hidden_sizes, {MEAN_HEAD: dim, VARIANCE_HEAD: dim}, seed)
    # 편향을 0 이 아닌 값으로 흔들어 모든 경로를 활성화한다
    params = params.with_tensors([t + 0.1 * rng.normal(size=t.shape) for t in params.tensors()])
    states = rng.uniform(-0.5, 0.5, size=(batch_size,) + config.state_shape)
    actions = rng.uniform(-config.max_action_step, config.max_action_step, size=(batch_size, config.entity_dim))
    targets = states + rng.normal(0.0, 0.1, size=states.shape)
    batch = (states, actions, targets)

    _, grads = backward(params, batch, config)
    numeric = numerical_gradient(lambda p: backward(p, batch, config)[0], params, h)
    return dict(zip(params.tensor_names(), relative_errors(grads.tensors(), numeric)))


class GaussianTransitionModel:
    """학습된 파라미터를 감싼 전이 모델 (CAI 추정기가 사용하는 predict 인터페이스)"""

    def __init__(self, params: MlpParams, config: WorldConfig):
        self.params = params
        self.config = config

    def predict(self, states: np.ndarray, actions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return predict_batch(self.params, states, actions, self.config)
