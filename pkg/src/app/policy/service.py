"""
목표 조건부 행동 복제 (BC)

입력: [평탄화된 상태, 목표 벡터], 목표 벡터는 오브젝트마다 [목표 여부, gx, gy].
학습 목표는 궤적 마지막 상태에서의 목표 엔티티 위치 (사후 목표 재지정).
"""

from functools import partial
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.utils import resample

from src.app.augment.models import AugmentConfig, WindowBatch
from src.app.augment.service import AugmentedStream, augment_dataset
from src.app.dataio.models import Dataset
from src.app.influence.models import InfluenceScores
from src.app.neural.models import AdamState
from src.app.neural.service import adam_step, init_orthogonal, mlp_forward, mse_backward
from src.app.policy.models import BcPolicy, EvalReport, PolicyConfig, TrainingPools
from src.app.world import service as world
from src.app.world.models import Regime, TaskSpec, WorldConfig
from src.common.error import ConfigError, DivergenceError, ErrorCode, SchemaError
from src.common.utils.logger import log_method_call, set_logger
from src.common.utils.parallel import parallel_map
from src.common.utils.seeding import derive_rng, derive_seed

logger = set_logger("policy")

ACTION_HEAD = "action"


# ===== 입력 구성 =====

def goal_mask(task: TaskSpec, config: WorldConfig) -> np.ndarray:
    mask = np.zeros(config.n_objects)
    for j in task.goal_entities:
        mask[j - 1] = 1.0
    return mask


def goal_vector(task: TaskSpec, config: WorldConfig, goal_state: np.ndarray | None = None) -> np.ndarray:
    """(3N,) 목표 벡터. goal_state 가 있으면 그 상태의 목표 엔티티 위치, 없으면 태스크 목표 위치"""
    positions = np.zeros((config.n_objects, config.entity_dim))
    if goal_state is not None:
        for j in task.goal_entities:
            positions[j - 1] = goal_state[j]
    else:
        for j, pos in zip(task.goal_entities, task.goal_array()):
            positions[j - 1] = pos
    positions *= goal_mask(task, config)[:, None]
    return np.concatenate([goal_mask(task, config)[:, None], positions], axis=1).ravel()


def goal_vectors(goal_states: np.ndarray, task_ids: Sequence[str], tasks: Mapping[str, TaskSpec], config: WorldConfig) -> np.ndarray:
    missing = sorted(set(task_ids) - set(tasks))
    if missing:
        raise ConfigError.of(ErrorCode.Common.INVALID_CONFIG, unknown_tasks=missing)
    return np.stack([goal_vector(tasks[t], config, g) for t, g in zip(task_ids, goal_states)])


def policy_inputs(states: np.ndarray, goals: np.ndarray) -> np.ndarray:
    return np.concatenate([states.reshape(len(states), -1), goals], axis=1)


def _transition_arrays(batch: WindowBatch, keep: np.ndarray, tasks: Mapping[str, TaskSpec], config: WorldConfig) -> Tuple[np.ndarray, np.ndarray]:
    """윈도우 묶음을 (x, y) 전이 배열로 펼친다 (윈도우의 모든 전이가 같은 목표를 공유)"""
    kappa = batch.actions.shape[1]
    idx = np.flatnonzero(keep)
    goals = goal_vectors(batch.goal_states[idx], [batch.task_ids[i] for i in idx], tasks, config)
    states = batch.states[idx, :kappa].reshape(-1, *config.state_shape)
    x = policy_inputs(states, np.repeat(goals, kappa, axis=0))
    y = batch.actions[idx].reshape(-1, config.entity_dim) / config.max_action_step
    return x, y


def _dataset_pools(dataset: Dataset, tasks: Mapping[str, TaskSpec], behaviors: Sequence[str]) -> TrainingPools:
    """물리화된 (증강) 데이터셋에서 원본/반사실 풀 분리"""
    config = dataset.config
    pools: Dict[bool, List[Tuple[np.ndarray, np.ndarray]]] = {False: [], True: []}
    for t in dataset.trajectories:
        is_cf = t.behavior == "counterfactual"
        source_behavior = t.augmentation.original_behavior if is_cf and t.augmentation else t.behavior
        if source_behavior not in behaviors:
            continue
        if t.task_id not in tasks:
            raise ConfigError.of(ErrorCode.Common.INVALID_CONFIG, unknown_tasks=[t.task_id])
        goal = goal_vector(tasks[t.task_id], config, t.final_goal_state())
        x = policy_inputs(t.states[:-1], np.repeat(goal[None], t.horizon, axis=0))
        pools[is_cf].append((x, t.actions / config.max_action_step))

    def _stack(items):
        if not items:
            return None, None
        return np.concatenate([i[0] for i in items]), np.concatenate([i[1] for i in items])

    original_x, original_y = _stack(pools[False])
    if original_x is None and not pools[True]:
        raise SchemaError.of(ErrorCode.Policy.EMPTY_STREAM, behaviors=list(behaviors))
    cf_x, cf_y = _stack(pools[True])
    if original_x is None:
        original_x, original_y = np.zeros((0, cf_x.shape[1])), np.zeros((0, config.entity_dim))
    return TrainingPools(original_x=original_x, original_y=original_y, counterfactual_x=cf_x, counterfactual_y=cf_y)


def _stream_pools(stream: AugmentedStream, tasks: Mapping[str, TaskSpec], behaviors: Sequence[str], pool_size: int, with_counterfactuals: bool) -> TrainingPools:
    config = stream.dataset.config
    originals = stream.window_arrays(range(stream.n_windows))
    keep = np.array([b in behaviors for b in originals.behaviors])
    if not keep.any():
        raise SchemaError.of(ErrorCode.Policy.EMPTY_STREAM, behaviors=list(behaviors))
    original_x, original_y = _transition_arrays(originals, keep, tasks, config)
    if not with_counterfactuals:
        return TrainingPools(original_x=original_x, original_y=original_y)

    # 행동 레이블 정책이 맞는 반사실만 모은다
    xs, ys, k, collected = [], [], 0, 0
    chunk = max(pool_size, 256)
    limit = 50 * pool_size
    while collected < pool_size and k < limit:
        batch = stream.counterfactual_arrays(chunk, start=k)
        keep = np.array([b in behaviors for b in batch.behaviors])
        keep &= np.cumsum(keep) <= pool_size - collected
        if keep.any():
            x, y = _transition_arrays(batch, keep, tasks, config)
            xs.append(x)
            ys.append(y)
            collected += int(keep.sum())
        k += chunk
    if not xs:
        raise SchemaError.of(ErrorCode.Policy.EMPTY_STREAM, reason="no counterfactual matched train_behaviors")
    return TrainingPools(
        original_x=original_x,
        original_y=original_y,
        counterfactual_x=np.concatenate(xs),
        counterfactual_y=np.concatenate(ys),
    )


def build_pools(
    source: AugmentedStream | Dataset,
    tasks: Mapping[str, TaskSpec],
    config: PolicyConfig,
    with_counterfactuals: bool = True,
) -> TrainingPools:
    behaviors = config.train_behaviors
    if isinstance(source, AugmentedStream):
        return _stream_pools(source, tasks, behaviors, config.cf_pool_size, with_counterfactuals)
    return _dataset_pools(source, tasks, behaviors)


# ===== 학습 =====

def fit_bc(pools: TrainingPools, world_config: WorldConfig, config: PolicyConfig, cf_ratio: float, seed: int) -> BcPolicy:
    """배치마다 round(cf_ratio * B) 개를 반사실 풀에서, 나머지를 원본 풀에서 뽑는다"""
    if pools.n_counterfactual == 0:
        cf_ratio = 0.0
    if pools.n_original == 0:
        cf_ratio = 1.0
    if pools.n_original + pools.n_counterfactual == 0:
        raise SchemaError.of(ErrorCode.Policy.EMPTY_STREAM)

    input_dim = pools.original_x.shape[1]
    params = init_orthogonal(input_dim, config.hidden_sizes, {ACTION_HEAD: world_config.entity_dim}, seed)
    adam = AdamState.zeros_like(params, config.learning_rate)
    rng = derive_rng(seed, "bc_minibatch")
    n_cf = int(round(cf_ratio * config.batch_size))
    n_orig = config.batch_size - n_cf

    rows, running = [], []
    for step in range(1, config.steps + 1):
        parts_x, parts_y = [], []
        if n_orig:
            idx = rng.integers(0, pools.n_original, size=n_orig)
            parts_x.append(pools.original_x[idx])
            parts_y.append(pools.original_y[idx])
        if n_cf:
            idx = rng.integers(0, pools.n_counterfactual, size=n_cf)
            parts_x.append(pools.counterfactual_x[idx])
            parts_y.append(pools.counterfactual_y[idx])
        loss, grads = mse_backward(params, np.concatenate(parts_x), np.concatenate(parts_y), ACTION_HEAD)
        if not np.isfinite(loss):
            raise DivergenceError.of(ErrorCode.Policy.DIVERGED, step=step, loss=str(loss))
        params, adam = adam_step(params, grads, adam)
        running.append(loss)
        if step % config.log_every == 0 or step == config.steps:
            rows.append({"step": step, "train_mse": float(np.mean(running))})
            running = []
            logger.debug(f"BC step {step}: mse={rows[-1]['train_mse']:.5f}")

    return BcPolicy(
        params=params,
        world=world_config,
        training={
            "cf_ratio": cf_ratio,
            "seed": seed,
            "steps": config.steps,
            "batch_size": config.batch_size,
            "learning_rate": config.learning_rate,
        },
        curves=pd.DataFrame(rows, columns=["step", "train_mse"]),
    )


@log_method_call("policy")
def train_bc(
    source: AugmentedStream | Dataset,
    tasks: Mapping[str, TaskSpec] | Sequence[TaskSpec],
    config: PolicyConfig,
    seed: int,
    goal_rule: str | None = None,
) -> BcPolicy:
    """증강 스트림 (또는 물리화된 데이터셋) 으로 BC 정책 학습"""
    tasks = _task_map(tasks)
    cf_ratio = 0.0
    if isinstance(source, AugmentedStream):
        if goal_rule is not None and goal_rule != source.config.goal_rule:
            source = AugmentedStream(source.dataset, source.scores, source.config.model_copy(update={"goal_rule": goal_rule}))
        cf_ratio = source.config.cf_ratio
        world_config = source.dataset.config
    else:
        world_config = source.config
    pools = build_pools(source, tasks, config, with_counterfactuals=cf_ratio > 0.0)
    if not isinstance(source, AugmentedStream) and pools.n_counterfactual:
        cf_ratio = pools.n_counterfactual / (pools.n_original + pools.n_counterfactual)
    logger.info(f"BC 학습: 원본 {pools.n_original}개, 반사실 {pools.n_counterfactual}개 전이, cf_ratio={cf_ratio}")
    return fit_bc(pools, world_config, config, cf_ratio, seed)


def _task_map(tasks: Mapping[str, TaskSpec] | Sequence[TaskSpec]) -> Dict[str, TaskSpec]:
    if isinstance(tasks, Mapping):
        return dict(tasks)
    return {t.task_id: t for t in tasks}


def act(policy: BcPolicy, states: np.ndarray, goals: np.ndarray) -> np.ndarray:
    """(B, E, D) 상태와 (B, 3N) 목표에서 행동 (B, D), 행동 박스로 클리핑"""
    m = policy.world.max_action_step
    outputs, _ = mlp_forward(policy.params, policy_inputs(states, goals))
    return np.clip(outputs[ACTION_HEAD] * m, -m, m)


# ===== 평가 =====

def bootstrap_ci(outcomes: Sequence[bool] | np.ndarray, n_boot: int = 1000, seed: int = 0) -> float:
    """성공률의 95% 퍼센타일 부트스트랩 신뢰구간 반폭"""
    values = np.asarray(outcomes, dtype=np.float64)
    if len(values) == 0:
        return 0.0
    base = derive_seed(seed, "bootstrap")
    means = [
        resample(values, replace=True, n_samples=len(values), random_state=(base + b) % (2 ** 32)).mean()
        for b in range(n_boot)
    ]
    low, high = np.percentile(means, [2.5, 97.5])
    return float((high - low) / 2.0)


def evaluate(
    policy: BcPolicy,
    task: TaskSpec,
    regime: Regime | str,
    episodes: int,
    horizon: int,
    seed: int,
    n_boot: int = 1000,
) -> EvalReport:
    """에피소드를 벡터화해서 동시에 굴린다. 어느 스텝에서든 is_success 이면 성공"""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    regime = Regime(regime)
    config = policy.world
    episode_seeds = [derive_seed(seed, "episode", task.task_id, regime.value, e) for e in range(episodes)]
    states = np.stack([world.reset(config, task, regime, s) for s in episode_seeds])
    goals = np.repeat(goal_vector(task, config)[None], episodes, axis=0)
    success = np.array([world.is_success(s, task) for s in states])

    for t in range(horizon):
        if success.all():
            break
        actions = act(policy, states, goals)
        noise = [derive_seed(s, "noise", t) for s in episode_seeds] if config.noise_std > 0 else None
        states = world.step_batch(states, actions, config, noise)
        success |= np.array([world.is_success(s, task) for s in states])

    return EvalReport(
        task_id=task.task_id,
        regime=regime,
        episodes=episodes,
        horizon=horizon,
        outcomes=success.tolist(),
        ci_half_width=bootstrap_ci(success, n_boot, seed),
    )


def _ablation_job(
    job: Tuple[float, int],
    pools: TrainingPools,
    world_config: WorldConfig,
    tasks: Sequence[TaskSpec],
    config: PolicyConfig,
) -> Dict[str, float]:
    ratio, seed = job
    policy = fit_bc(pools, world_config, config, ratio, derive_seed(seed, "bc"))
    ood = [evaluate(policy, t, Regime.OOD, config.episodes, config.horizon, seed, config.n_boot) for t in tasks]
    in_dist = [evaluate(policy, t, Regime.ID, config.episodes, config.horizon, seed, config.n_boot) for t in tasks]
    return {
        "ratio": ratio,
        "seed": seed,
        "ood_success": float(np.mean([r.success_rate for r in ood])),
        "id_success": float(np.mean([r.success_rate for r in in_dist])),
        "final_mse": float(policy.curves["train_mse"].iloc[-1]),
    }


@log_method_call("policy")
def ratio_ablation(
    dataset: Dataset,
    scores: InfluenceScores,
    tasks: Sequence[TaskSpec],
    augment_config: AugmentConfig,
    policy_config: PolicyConfig,
    ratios: Sequence[float],
    seeds: Sequence[int],
    jobs: int | None = None,
) -> pd.DataFrame:
    """(ratio, seed) 마다 정책 하나를 학습하고 OOD/ID 성공률을 기록한다"""
    stream = augment_dataset(dataset, scores, augment_config)
    needs_cf = any(r > 0.0 for r in ratios)
    pools = build_pools(stream, _task_map(tasks), policy_config, with_counterfactuals=needs_cf)
    job_list = [(float(r), int(s)) for r in ratios for s in seeds]
    logger.info(f"비율 실험: {len(ratios)}개 비율 x {len(seeds)}개 시드")
    rows = parallel_map(
        partial(_ablation_job, pools=pools, world_config=dataset.config, tasks=list(tasks), config=policy_config),
        job_list,
        jobs,
    )
    return pd.DataFrame(rows, columns=["ratio", "seed", "ood_success", "id_success", "final_mse"])
