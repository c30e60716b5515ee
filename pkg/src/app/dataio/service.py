"""
오프라인 데이터셋 생성 서비스

스크립트 전문가 정책과 균등 무작위 정책을 섞어 ID 레짐 궤적을 만든다.
"""

from functools import partial
from typing import List, Sequence, Tuple

import numpy as np

from src.app.dataio.models import Dataset, Provenance, SplitSpec, Trajectory
from src.app.world.models import ActionVec, FactoredState, Regime, TaskSpec, WorldConfig
from src.app.world import service as world
from src.common.constants import AGENT_INDEX
from src.common.error import ErrorCode, SchemaError
from src.common.utils.logger import log_method_call, set_logger
from src.common.utils.parallel import parallel_map
from src.common.utils.seeding import derive_rng, derive_seed

logger = set_logger("dataio")


def scripted_expert(state: FactoredState, task: TaskSpec, config: WorldConfig) -> ActionVec:
    """두 단계 탐욕 제어기

    1) 아직 풀리지 않은 목표 오브젝트의 목표 반대편으로 접근
    2) 반경 안에 들어오면 오브젝트와 함께 목표 위치로 이동
    """
    state = np.asarray(state, dtype=np.float64)
    m = config.max_action_step
    r = config.interact_radius
    settle = 0.1 * task.success_radius
    agent = state[AGENT_INDEX]

    for j, goal in zip(task.goal_entities, task.goal_array()):
        obj = state[j]
        to_goal = goal - obj
        dist_goal = float(np.linalg.norm(to_goal))
        if dist_goal <= settle:
            continue
        if np.linalg.norm(obj - agent) <= r:
            delta = to_goal
        else:
            behind = obj - (to_goal / dist_goal) * 0.5 * r
            delta = behind - agent
        return np.clip(delta, -m, m)
    return np.zeros(config.entity_dim)


def random_policy(seed: int, config: WorldConfig) -> ActionVec:
    """행동 박스 위 균등분포 (seed 에 대해 결정론적)"""
    m = config.max_action_step
    return np.random.default_rng(seed).uniform(-m, m, size=config.entity_dim)


def noise_seeds(trajectory_seed: int, horizon: int) -> List[int]:
    return [derive_seed(trajectory_seed, "noise", t) for t in range(horizon)]


def rollout(
    config: WorldConfig,
    task: TaskSpec,
    behavior: str,
    horizon: int,
    trajectory_seed: int,
    regime: Regime = Regime.ID,
) -> Trajectory:
    state = world.reset(config, task, regime, trajectory_seed)
    seeds = noise_seeds(trajectory_seed, horizon)
    states = [state]
    actions = []
    for t in range(horizon):
        if behavior == "expert":
            action = scripted_expert(state, task, config)
        else:
            action = random_policy(derive_seed(trajectory_seed, "action", t), config)
        state = world.step(state, action, config, seeds[t])
        actions.append(action)
        states.append(state)
    return Trajectory(
        states=np.stack(states),
        actions=np.stack(actions).reshape(horizon, config.entity_dim),
        task_id=task.task_id,
        regime=regime,
        seed=trajectory_seed,
        behavior=behavior,
    )


def _rollout_job(job: Tuple[int, str, int], config: WorldConfig, tasks: Sequence[TaskSpec], horizon: int, seed: int) -> Trajectory:
    index, behavior, task_index = job
    return rollout(config, tasks[task_index], behavior, horizon, derive_seed(seed, "trajectory", index))


@log_method_call("dataio")
def generate_dataset(
    config: WorldConfig,
    tasks: Sequence[TaskSpec],
    n_trajectories: int,
    expert_fraction: float,
    horizon: int,
    seed: int,
    jobs: int | None = None,
) -> Dataset:
    """전문가/무작위 궤적을 expert_fraction 비율로 섞은 ID 데이터셋"""
    if n_trajectories < 1 or horizon < 1:
        raise ValueError("n_trajectories >= 1 and horizon >= 1 are required")
    if not tasks:
        raise ValueError("at least one task is required")
    if not 0.0 <= expert_fraction <= 1.0:
        raise ValueError("expert_fraction must be in [0, 1]")
    for task in tasks:
        world.validate_task(config, task)

    n_expert = int(round(n_trajectories * expert_fraction))
    jobs_spec = [
        (i, "expert" if i < n_expert else "random", i % len(tasks))
        for i in range(n_trajectories)
    ]
    logger.info(f"데이터셋 생성: {n_trajectories}개 궤적 (전문가 {n_expert}, 무작위 {n_trajectories - n_expert}), horizon={horizon}")
    trajectories = parallel_map(
        partial(_rollout_job, config=config, tasks=list(tasks), horizon=horizon, seed=seed),
        jobs_spec,
        jobs,
    )
    return Dataset(
        trajectories=trajectories,
        config=config,
        provenance=Provenance(expert_fraction=expert_fraction, generator_seed=seed),
    )


def split(dataset: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset]:
    """셔플된 인덱스로 궤적을 train/val 로 나눈다 (크기 floor(n*f) / 나머지)"""
    n = len(dataset)
    if n < 2:
        raise SchemaError.of(ErrorCode.Dataset.TOO_SMALL, n_trajectories=n)
    order = derive_rng(spec.split_seed, "split").permutation(n)
    n_train = min(max(int(np.floor(n * spec.train_fraction)), 1), n - 1)
    train_idx = sorted(order[:n_train].tolist())
    val_idx = sorted(order[n_train:].tolist())

    def _subset(indices: List[int]) -> Dataset:
        return Dataset(
            trajectories=[dataset.trajectories[i] for i in indices],
            config=dataset.config,
            provenance=dataset.provenance,
        )

    return _subset(train_idx), _subset(val_idx)


def iter_transitions(dataset: Dataset) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(states, actions, next_states) 배열"""
    states = np.concatenate([t.states[:-1] for t in dataset.trajectories], axis=0)
    actions = np.concatenate([t.actions for t in dataset.trajectories], axis=0)
    next_states = np.concatenate([t.states[1:] for t in dataset.trajectories], axis=0)
    return states, actions, next_states


def replay_check(trajectory: Trajectory, config: WorldConfig) -> float:
    """저장된 행동을 다시 적용했을 때 저장된 상태와의 최대 편차"""
    replayed = world.replay(
        trajectory.states[0], trajectory.actions, config, noise_seeds(trajectory.seed, trajectory.horizon)
    )
    return float(np.max(np.abs(np.stack(replayed) - trajectory.states)))
