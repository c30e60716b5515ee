"""
파티클 푸시 월드 (결정론적 2D 다중 엔티티 환경)

에이전트가 interact_radius 안에 있는 오브젝트를 같은 변위만큼 함께 밀어낸다.
반경 밖의 오브젝트는 비트 단위로 그대로 유지된다.
"""

from typing import Iterable, List, Sequence

import numpy as np

from src.app.world.models import ActionVec, FactoredState, Regime, TaskSpec, WorldConfig
from src.common.constants import AGENT_INDEX
from src.common.error import ConfigError, ErrorCode, SchemaError
from src.common.utils.logger import set_logger
from src.common.utils.seeding import derive_rng

logger = set_logger("world")

# 에이전트 시작 위치 잡음의 노름 상한
AGENT_START_NOISE = 0.05


def validate_task(config: WorldConfig, task: TaskSpec) -> None:
    """태스크가 월드 설정과 맞는지 확인 (충돌 시 ConfigError)"""
    objects = set(range(1, config.n_objects + 1))
    h = config.arena_half_extent

    def _in_arena(pos) -> bool:
        return all(abs(c) <= h for c in pos)

    bad_goals = [j for j in task.goal_entities if j not in objects]
    bad_pins = [j for j in task.nuisance_rule if j not in objects]
    bad_ood = [j for j in task.ood_randomize if j not in objects]
    if bad_goals or bad_pins or bad_ood:
        raise ConfigError.of(
            ErrorCode.World.TASK_CONFLICT,
            task_id=task.task_id,
            goal_entities=bad_goals,
            nuisance_rule=bad_pins,
            ood_randomize=bad_ood,
        )
    outside = [j for j, pos in task.nuisance_rule.items() if not _in_arena(pos)]
    outside += [j for j, pos in zip(task.goal_entities, task.goal_positions) if not _in_arena(pos)]
    if outside:
        raise ConfigError.of(ErrorCode.World.TASK_CONFLICT, task_id=task.task_id, outside_arena=outside)
    # 목표 오브젝트의 고정 위치는 두 레짐 모두에서 시작 조건이다
    pinned_goals = [j for j in task.goal_entities if j in task.nuisance_rule and j in task.ood_randomize]
    if pinned_goals:
        raise ConfigError.of(ErrorCode.World.TASK_CONFLICT, task_id=task.task_id, pinned_and_randomized=pinned_goals)


def validate_state(state: FactoredState, config: WorldConfig) -> FactoredState:
    state = np.asarray(state, dtype=np.float64)
    if state.shape != config.state_shape:
        raise SchemaError.of(ErrorCode.World.INVALID_STATE, expected=config.state_shape, actual=state.shape)
    if not np.all(np.isfinite(state)) or np.any(np.abs(state) > config.arena_half_extent):
        raise SchemaError.of(ErrorCode.World.INVALID_STATE, reason="out of arena or non-finite")
    return state


def placement_plan(task: TaskSpec, regime: Regime, coins: np.ndarray) -> dict:
    """레짐별로 고정될 오브젝트와 위치를 정한다

    ID: nuisance_rule 의 모든 오브젝트를 고정.
    OOD: ood_randomize 오브젝트는 확률 ood_randomize_prob 로 풀어주고 나머지는 ID 와 같게 고정.
    """
    pinned = {}
    for j, pos in task.nuisance_rule.items():
        released = (
            regime == Regime.OOD
            and j in task.ood_randomize
            and coins[j - 1] < task.ood_randomize_prob
        )
        if not released:
            pinned[j] = pos
    return pinned


def reset(config: WorldConfig, task: TaskSpec, regime: Regime | str, seed: int) -> FactoredState:
    """초기 상태 생성 (seed 에 대해 결정론적)"""
    validate_task(config, task)
    regime = Regime(regime)
    rng = derive_rng(seed, "reset")
    h = config.arena_half_extent
    state = np.empty(config.state_shape, dtype=np.float64)
    offset = rng.uniform(-AGENT_START_NOISE, AGENT_START_NOISE, size=config.entity_dim)
    norm = float(np.linalg.norm(offset))
    if norm > AGENT_START_NOISE:
        offset *= AGENT_START_NOISE / norm
    state[AGENT_INDEX] = offset
    state[1:] = rng.uniform(-h, h, size=(config.n_objects, config.entity_dim))
    # 레짐과 무관하게 항상 같은 개수의 난수를 소비해야 ID/OOD 가 같은 시드에서 정렬된다
    coins = rng.uniform(size=config.n_objects)
    for j, pos in placement_plan(task, regime, coins).items():
        state[j] = pos
    return np.clip(state, -h, h)


def step_batch(
    states: np.ndarray,
    actions: np.ndarray,
    config: WorldConfig,
    noise_seeds: Sequence[int] | None = None,
) -> np.ndarray:
    """여러 상태를 한 번에 전이시킨다 (행 단위로 step 과 비트 단위 동일)"""
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    h = config.arena_half_extent
    m = config.max_action_step

    delta = np.clip(actions, -m, m)
    agent = states[:, AGENT_INDEX]
    offset = states[:, 1:] - agent[:, None, :]
    # 상호작용 판정은 전이 이전 상태 기준, 경계 포함 (closed ball)
    pushed = np.hypot(offset[..., 0], offset[..., 1]) <= config.interact_radius

    next_states = states.copy()
    agent_next = agent + delta
    if config.noise_std > 0:
        if noise_seeds is None:
            raise ValueError("noise_std > 0 requires noise_seeds")
        noise = np.stack([
            np.random.default_rng(int(s)).normal(0.0, config.noise_std, size=config.entity_dim)
            for s in noise_seeds
        ])
        agent_next = agent_next + noise
    next_states[:, AGENT_INDEX] = np.clip(agent_next, -h, h)
    moved = np.clip(states[:, 1:] + delta[:, None, :], -h, h)
    next_states[:, 1:] = np.where(pushed[..., None], moved, states[:, 1:])
    return next_states


def step(state: FactoredState, action: ActionVec, config: WorldConfig, noise_seed: int = 0) -> FactoredState:
    """단일 전이 P(S' | S, A)"""
    return step_batch(np.asarray(state)[None], np.asarray(action)[None], config, [noise_seed])[0]


def replay(
    initial_state: FactoredState,
    actions: Iterable[ActionVec],
    config: WorldConfig,
    noise_seeds: Sequence[int] | None = None,
) -> List[FactoredState]:
    """초기 상태에서 행동 시퀀스를 그대로 적용한 상태 시퀀스"""
    states = [np.asarray(initial_state, dtype=np.float64)]
    for t, action in enumerate(actions):
        seed = noise_seeds[t] if noise_seeds is not None else 0
        states.append(step(states[-1], action, config, seed))
    return states


def influence_labels(states: np.ndarray, config: WorldConfig) -> np.ndarray:
    """(B, E, D) 상태에 대한 정답 영향 레이블 (B, E)"""
    states = np.asarray(states, dtype=np.float64)
    offset = states[:, 1:] - states[:, AGENT_INDEX][:, None, :]
    labels = np.ones(states.shape[:2], dtype=bool)
    labels[:, 1:] = np.hypot(offset[..., 0], offset[..., 1]) <= config.interact_radius
    return labels


def ground_truth_influence(state: FactoredState, config: WorldConfig) -> np.ndarray:
    """엔티티별 정답 영향 여부 (에이전트는 항상 True)"""
    return influence_labels(np.asarray(state)[None], config)[0]


def is_success(state: FactoredState, task: TaskSpec) -> bool:
    """모든 목표 엔티티가 success_radius 안에 있으면 성공 (목표가 없으면 참)"""
    if not task.goal_entities:
        return True
    state = np.asarray(state, dtype=np.float64)
    positions = state[task.goal_entities]
    distances = np.linalg.norm(positions - task.goal_array(), axis=-1)
    return bool(np.all(distances <= task.success_radius))
