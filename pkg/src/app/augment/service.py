"""
CAIAC 반사실 증강

1) 상태별 uncontrollable set U_s = {j : C^j(s) <= theta}, 윈도우는 kappa 스텝의 교집합
2) 원본 윈도우를 뽑고 U 의 엔티티마다 도너 윈도우를 데이터셋에서 균등하게 뽑는다
3) 도너의 U 에도 그 엔티티가 있으면 엔티티의 상태 시퀀스 (kappa+1 개) 를 도너 것으로 교체
행동과 나머지 엔티티는 그대로 둔다.
"""

from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.app.augment.models import AugmentConfig, CounterfactualRecord, UncontrollableSet, WindowBatch
from src.app.dataio.models import Dataset, Provenance, Trajectory, WindowRef
from src.app.influence.models import InfluenceScores
from src.common.constants import AGENT_INDEX
from src.common.error import AugmentError, ErrorCode, SchemaError
from src.common.utils.logger import set_logger
from src.common.utils.seeding import derive_rng, derive_seed

logger = set_logger("augment")

WindowSource = Tuple[Trajectory, WindowRef]


# ===== uncontrollable set =====

def uncontrollable_set(scores: np.ndarray | Mapping[int, float], theta: float, kappa: int = 1) -> UncontrollableSet:
    """경계값 C^j == theta 도 포함"""
    if isinstance(scores, Mapping):
        items = scores.items()
    else:
        items = enumerate(np.asarray(scores, dtype=np.float64))
    entities = [int(j) for j, c in items if j != AGENT_INDEX and c <= theta]
    return UncontrollableSet(entities=entities, theta=theta, kappa=kappa)


def windowed_uncontrollable_set(score_rows: Sequence, theta: float, kappa: int) -> UncontrollableSet:
    """t..t+kappa-1 스텝 점수의 uncontrollable set 교집합"""
    if len(score_rows) < kappa:
        raise AugmentError.of(ErrorCode.Augment.NOT_ENOUGH_SCORES, kappa=kappa, n_scores=len(score_rows))
    result = uncontrollable_set(score_rows[0], theta, kappa)
    for row in list(score_rows)[1:kappa]:
        result = result.intersection(uncontrollable_set(row, theta))
    return result


def window_mask(trajectory_scores: np.ndarray, theta: float, kappa: int) -> np.ndarray:
    """(T+1, E) 점수에서 시작 스텝별 윈도우 uncontrollable 마스크 (T-kappa+1, E)"""
    per_step = trajectory_scores[:-1] <= theta
    per_step[:, AGENT_INDEX] = False
    if len(per_step) < kappa:
        return np.zeros((0, per_step.shape[1]), dtype=bool)
    return sliding_window_view(per_step, kappa, axis=0).all(axis=-1)


# ===== swap =====

def extract_window(trajectory: Trajectory, start: int, kappa: int, goal_rule: str = "trajectory_final") -> Trajectory:
    """궤적의 start..start+kappa 구간 (상태 kappa+1 개, 행동 kappa 개)"""
    if start < 0 or start + kappa > trajectory.horizon:
        raise AugmentError.of(ErrorCode.Augment.LAYOUT_MISMATCH, start=start, kappa=kappa, horizon=trajectory.horizon)
    return Trajectory(
        states=trajectory.states[start:start + kappa + 1].copy(),
        actions=trajectory.actions[start:start + kappa].copy(),
        task_id=trajectory.task_id,
        regime=trajectory.regime,
        seed=trajectory.seed,
        behavior=trajectory.behavior,
        goal_state=trajectory.final_goal_state().copy() if goal_rule == "trajectory_final" else None,
    )


def _check_layout(original: Trajectory, donor: Trajectory) -> None:
    if original.states.shape != donor.states.shape or original.actions.shape != donor.actions.shape:
        raise AugmentError.of(
            ErrorCode.Augment.LAYOUT_MISMATCH,
            original=list(original.states.shape),
            donor=list(donor.states.shape),
        )


def swap_entities(
    original: Trajectory,
    original_ref: WindowRef,
    donors: Mapping[int, WindowSource],
    method: str = "caiac",
) -> CounterfactualRecord:
    """엔티티별 도너에서 상태 시퀀스를 가져온다. 원본은 수정하지 않는다"""
    states = original.states.copy()
    goal_state = None if original.goal_state is None else original.goal_state.copy()
    donor_refs = {}
    for j in sorted(donors):
        donor, ref = donors[j]
        _check_layout(original, donor)
        states[:, j] = donor.states[:, j]
        if goal_state is not None and donor.goal_state is not None:
            goal_state[j] = donor.goal_state[j]
        donor_refs[j] = ref
    return CounterfactualRecord(
        method=method,
        task_id=original.task_id,
        original_behavior=original.behavior,
        original_ref=original_ref,
        donor_refs=donor_refs,
        swapped_entities=sorted(donors),
        states=states,
        actions=original.actions.copy(),
        goal_state=goal_state,
        skipped=not donors,
    )


def swap(
    original: Trajectory,
    donor: Trajectory,
    shared: UncontrollableSet | Iterable[int],
    original_ref: WindowRef | None = None,
    donor_ref: WindowRef | None = None,
) -> CounterfactualRecord:
    """shared 의 엔티티를 하나의 도너에서 교체 (shared 가 비면 skipped 레코드)

    결정론적 연산이라 난수 시드를 받지 않는다.
    """
    _check_layout(original, donor)
    original_ref = original_ref or WindowRef(trajectory=0, step=0)
    donor_ref = donor_ref or WindowRef(trajectory=0, step=0)
    entities = shared.entities if isinstance(shared, UncontrollableSet) else sorted(set(shared))
    return swap_entities(original, original_ref, {j: (donor, donor_ref) for j in entities})


# ===== 데이터셋 증강 =====

class AugmentedStream:
    """원본 윈도우와 반사실 윈도우를 cf_ratio 비율로 섞어 내보내는 스트림"""

    def __init__(self, dataset: Dataset, scores: InfluenceScores, config: AugmentConfig):
        if len(dataset) == 0:
            raise SchemaError.of(ErrorCode.Dataset.TOO_SMALL, n_trajectories=0)
        if scores.lengths != [len(t.states) for t in dataset.trajectories]:
            raise AugmentError.of(
                ErrorCode.Augment.LAYOUT_MISMATCH,
                reason="scores do not cover dataset",
                n_scores=len(scores),
                n_states=dataset.n_states,
            )
        self.dataset = dataset
        self.scores = scores
        self.config = config

        refs, masks = [], []
        for i, trajectory in enumerate(dataset.trajectories):
            mask = window_mask(scores.for_trajectory(i), config.theta, config.kappa)
            refs += [(i, t) for t in range(len(mask))]
            masks.append(mask)
        if not refs:
            raise AugmentError.of(ErrorCode.Augment.NOT_ENOUGH_SCORES, kappa=config.kappa)
        self.refs: List[Tuple[int, int]] = refs
        # (윈도우 수, E) 윈도우별 uncontrollable 마스크
        self.masks = np.concatenate(masks, axis=0)
        self.swappable = np.flatnonzero(self.masks.any(axis=1))
        if len(self.swappable) == 0:
            logger.warning(f"theta={config.theta}, kappa={config.kappa} 에서 모든 윈도우의 uncontrollable set 이 비어 있습니다")

    @property
    def n_windows(self) -> int:
        return len(self.refs)

    def window(self, index: int) -> WindowSource:
        i, t = self.refs[index]
        ref = WindowRef(trajectory=i, step=t)
        return extract_window(self.dataset.trajectories[i], t, self.config.kappa, self.config.goal_rule), ref

    def window_set(self, index: int) -> UncontrollableSet:
        return UncontrollableSet(
            entities=np.flatnonzero(self.masks[index]).tolist(), theta=self.config.theta, kappa=self.config.kappa
        )

    def draw(self, rng: np.random.Generator) -> Tuple[int, Dict[int, int]]:
        """(원본 윈도우, 엔티티 -> 도너 윈도우)

        원본 하나에 대해 엔티티마다 도너를 한 번씩 뽑고, 교환이 하나도 없으면 다시 뽑는다.
        """
        if len(self.swappable) == 0:
            raise AugmentError.of(ErrorCode.Augment.NO_SWAPPABLE, theta=self.config.theta, kappa=self.config.kappa)
        for _ in range(self.config.max_attempts):
            index = int(self.swappable[rng.integers(len(self.swappable))])
            donors = {}
            for j in np.flatnonzero(self.masks[index]):
                donor_index = int(rng.integers(self.n_windows))
                if self.masks[donor_index, j]:
                    donors[int(j)] = donor_index
            if donors:
                return index, donors
        raise AugmentError.of(ErrorCode.Augment.NO_SWAPPABLE, attempts=self.config.max_attempts)

    def counterfactual_from_rng(self, rng: np.random.Generator) -> CounterfactualRecord:
        index, donors = self.draw(rng)
        original, ref = self.window(index)
        return swap_entities(original, ref, {j: self.window(d) for j, d in donors.items()})

    def counterfactual(self, k: int) -> CounterfactualRecord:
        return self.counterfactual_from_rng(derive_rng(self.config.seed, "augment", k))

    def counterfactuals(self, n: int) -> List[CounterfactualRecord]:
        return [self.counterfactual(k) for k in range(n)]

    def _window_rows(self, index: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        kappa = self.config.kappa
        i, t = self.refs[index]
        trajectory = self.dataset.trajectories[i]
        states = trajectory.states[t:t + kappa + 1]
        goal = trajectory.final_goal_state() if self.config.goal_rule == "trajectory_final" else states[-1]
        return states, trajectory.actions[t:t + kappa], goal

    def window_arrays(self, indices: Sequence[int]) -> WindowBatch:
        rows = [self._window_rows(index) for index in indices]
        sources = [self.dataset.trajectories[self.refs[index][0]] for index in indices]
        return WindowBatch(
            states=np.stack([r[0] for r in rows]),
            actions=np.stack([r[1] for r in rows]),
            goal_states=np.stack([r[2] for r in rows]),
            task_ids=[t.task_id for t in sources],
            behaviors=[t.behavior for t in sources],
        )

    def counterfactual_arrays(self, n: int, start: int = 0) -> WindowBatch:
        """counterfactual(k) (k = start..start+n-1) 와 같은 내용을 레코드 없이 배열로 만든다"""
        draws = [self.draw(derive_rng(self.config.seed, "augment", k)) for k in range(start, start + n)]
        batch = self.window_arrays([index for index, _ in draws])
        states, goals = batch.states.copy(), batch.goal_states.copy()
        for row, (_, donors) in enumerate(draws):
            for j, donor_index in donors.items():
                donor_states, _, donor_goal = self._window_rows(donor_index)
                states[row, :, j] = donor_states[:, j]
                if self.config.goal_rule == "trajectory_final":
                    goals[row, j] = donor_goal[j]
                else:
                    goals[row] = states[row, -1]
        return batch.model_copy(update={"states": states, "goal_states": goals})

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> List[Trajectory]:
        """round(cf_ratio * batch_size) 개의 반사실과 나머지 원본 윈도우"""
        n_cf = int(round(self.config.cf_ratio * batch_size))
        batch = []
        for _ in range(batch_size - n_cf):
            batch.append(self.window(int(rng.integers(self.n_windows)))[0])
        for _ in range(n_cf):
            cf_rng = np.random.default_rng(int(rng.integers(2 ** 63 - 1)))
            batch.append(self.counterfactual_from_rng(cf_rng).to_trajectory())
        return batch

    def n_counterfactuals(self) -> int:
        r = self.config.cf_ratio
        if r >= 1.0:
            return self.n_windows
        return int(round(self.n_windows * r / (1.0 - r)))

    def materialize(self) -> Dataset:
        """원본 윈도우 전체 + 반사실을 고르게 끼워 넣은 데이터셋

        cf_ratio = 0 이면 원본 데이터셋 그대로, cf_ratio = 1 이면 윈도우 수만큼의 반사실만.
        """
        if self.config.cf_ratio == 0.0:
            return self.dataset.model_copy()
        n_cf = self.n_counterfactuals()
        n_orig = 0 if self.config.cf_ratio >= 1.0 else self.n_windows
        total = n_orig + n_cf
        trajectories = []
        o = c = 0
        for i in range(total):
            # i 번째 위치까지 반사실 수가 floor((i+1) * n_cf / total) 가 되도록 배치
            if (i + 1) * n_cf // total > c:
                trajectories.append(self.counterfactual(c).to_trajectory(derive_seed(self.config.seed, "cf", c)))
                c += 1
            else:
                trajectories.append(self.window(o)[0])
                o += 1
        logger.info(f"증강 데이터셋: 원본 윈도우 {n_orig}개 + 반사실 {n_cf}개 (cf_ratio={self.config.cf_ratio})")
        return Dataset(
            trajectories=trajectories,
            config=self.dataset.config,
            provenance=Provenance(
                expert_fraction=self.dataset.provenance.expert_fraction,
                generator_seed=self.dataset.provenance.generator_seed,
            ),
        )


def augment_dataset(dataset: Dataset, scores: InfluenceScores, config: AugmentConfig) -> AugmentedStream:
    return AugmentedStream(dataset, scores, config)


# ===== 대조군 =====

def random_swap(stream: AugmentedStream, k: int) -> CounterfactualRecord:
    """영향 점수를 무시하는 대조군: 균등한 도너 하나에서 비어 있지 않은 임의 엔티티 부분집합 (에이전트 포함) 을 교체"""
    rng = derive_rng(stream.config.seed, "random_swap", k)
    original, ref = stream.window(int(rng.integers(stream.n_windows)))
    donor_window = stream.window(int(rng.integers(stream.n_windows)))
    n_entities = original.states.shape[1]
    mask = np.zeros(n_entities, dtype=bool)
    while not mask.any():
        mask = rng.integers(0, 2, size=n_entities).astype(bool)
    return swap_entities(original, ref, {int(j): donor_window for j in np.flatnonzero(mask)}, method="random_swap")
