"""
반사실 검증 / 지지 집합 평가

- feasibility_replay: 시뮬레이터를 반사실 초기 상태로 되돌리고 저장된 행동을 적용해 결과를 비교
- support_estimate: 오브젝트 x 좌표 부호로 2^N 범주를 만들어 점유 비율 계산
"""

from functools import partial
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import norm

from src.app.augment.models import AugmentConfig, CounterfactualRecord
from src.app.augment.service import AugmentedStream, augment_dataset, random_swap, swap_entities
from src.app.dataio.models import Dataset
from src.app.evalharness.models import ComparisonReport, EvalConfig, FeasibilityReport, FeasibilityVerdict, SupportReport
from src.app.influence.models import InfluenceScores
from src.app.world import service as world
from src.app.world.models import WorldConfig
from src.common.constants import REPLAY_TOLERANCE
from src.common.error import ErrorCode, EvalError
from src.common.utils.logger import log_method_call, set_logger
from src.common.utils.parallel import parallel_map
from src.common.utils.seeding import derive_rng, derive_seed

logger = set_logger("evalharness")

MAX_SUPPORT_OBJECTS = 20
FIT_VARIANCE_FLOOR = 1e-12
QUANTILES = (5, 25, 50, 75, 95)


def _check_record(record: CounterfactualRecord, config: WorldConfig) -> None:
    states, actions = np.asarray(record.states), np.asarray(record.actions)
    if (
        states.ndim != 3
        or states.shape[1:] != config.state_shape
        or actions.shape != (len(states) - 1, config.entity_dim)
    ):
        raise EvalError.of(
            ErrorCode.Eval.RECORD_MISMATCH, states=list(states.shape), actions=list(actions.shape)
        )


def _replay_verdict(item: Tuple[int, CounterfactualRecord], config: WorldConfig, tolerance: float) -> FeasibilityVerdict:
    index, record = item
    final = world.replay(record.states[0], record.actions, config)[-1]
    deviation = float(np.max(np.abs(final - record.states[-1])))
    return FeasibilityVerdict(
        index=index,
        passed=deviation <= tolerance,
        value=deviation,
        threshold=tolerance,
        swapped_entities=record.swapped_entities,
    )


def _likelihood_verdict(item: Tuple[int, CounterfactualRecord], config: WorldConfig, k_sims: int, seed: int) -> FeasibilityVerdict:
    """K_sims 번 시뮬레이션한 최종 상태에 대각 가우시안을 최대우도로 맞추고 목표 상태의 로그우도를 구한다

    3 sigma 지점의 로그우도 이상이면 통과.
    """
    index, record = item
    states = np.repeat(record.states[0][None], k_sims, axis=0)
    for t, action in enumerate(record.actions):
        seeds = [derive_seed(seed, "feasibility", index, sim, t) for sim in range(k_sims)]
        states = world.step_batch(states, np.repeat(action[None], k_sims, axis=0), config, seeds)
    finals = states.reshape(k_sims, -1)
    mean = finals.mean(axis=0)
    std = np.sqrt(np.maximum(finals.var(axis=0), FIT_VARIANCE_FLOOR))
    loglik = float(norm.logpdf(record.states[-1].ravel(), loc=mean, scale=std).sum())
    threshold = float(norm.logpdf(mean + 3.0 * std, loc=mean, scale=std).sum())
    return FeasibilityVerdict(
        index=index,
        passed=loglik >= threshold,
        value=loglik,
        threshold=threshold,
        swapped_entities=record.swapped_entities,
    )


@log_method_call("evalharness")
def feasibility_replay(
    records: Sequence[CounterfactualRecord],
    config: WorldConfig,
    k_sims: int = 50,
    seed: int = 0,
    tolerance: float = REPLAY_TOLERANCE,
    method_id: str | None = None,
    jobs: int | None = None,
) -> FeasibilityReport:
    """결정론적 월드는 정확한 재현, 잡음이 있으면 가우시안 로그우도로 판정"""
    for record in records:
        _check_record(record, config)
    method_id = method_id or (records[0].method if records else "none")
    items = list(enumerate(records))

    if config.noise_std == 0.0:
        verdicts = parallel_map(partial(_replay_verdict, config=config, tolerance=tolerance), items, jobs)
        report = FeasibilityReport(method_id=method_id, mode="exact_replay", tolerance=tolerance, verdicts=verdicts)
    else:
        verdicts = parallel_map(partial(_likelihood_verdict, config=config, k_sims=k_sims, seed=seed), items, jobs)
        values = np.array([v.value for v in verdicts])
        quantiles = (
            {f"q{q:02d}": float(np.percentile(values, q)) for q in QUANTILES} if len(values) else None
        )
        report = FeasibilityReport(
            method_id=method_id,
            mode="gaussian_loglik",
            tolerance=tolerance,
            k_sims=k_sims,
            verdicts=verdicts,
            quantiles=quantiles,
        )
    logger.info(f"[{method_id}] 실현 가능성: {report.pass_rate:.3f} ({report.n_records}개, {report.mode})")
    return report


# ===== 지지 집합 =====

def _collect_states(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.all_states() if len(data) else np.zeros((0,) + data.config.state_shape)
    if isinstance(data, np.ndarray):
        return data
    blocks = [np.asarray(item.states) for item in data]
    return np.concatenate(blocks, axis=0) if blocks else np.zeros((0, 0, 0))


def support_codes(states: np.ndarray) -> np.ndarray:
    """오브젝트 x < 0 -> 0, 그 외 1 로 비트를 만든 범주 코드"""
    bits = (states[:, 1:, 0] >= 0.0).astype(np.int64)
    return bits @ (np.int64(1) << np.arange(bits.shape[1], dtype=np.int64))


def support_estimate(data, config: WorldConfig, method_id: str = "none") -> SupportReport:
    """Dataset, (n, E, D) 배열, 또는 궤적/반사실 레코드 목록"""
    n_objects = config.n_objects
    if n_objects > MAX_SUPPORT_OBJECTS:
        raise EvalError.of(
            ErrorCode.Eval.TOO_MANY_OBJECTS, n_objects=n_objects, limit=MAX_SUPPORT_OBJECTS, hint="sketch mode is not supported"
        )
    states = _collect_states(data)
    if len(states) == 0:
        raise EvalError.of(ErrorCode.Eval.RECORD_MISMATCH, reason="no states")
    if states.shape[1:] != config.state_shape:
        raise EvalError.of(ErrorCode.Eval.RECORD_MISMATCH, expected=config.state_shape, actual=states.shape[1:])
    occupied = len(np.unique(support_codes(states)))
    return SupportReport(
        method_id=method_id, n_objects=n_objects, n_states=len(states), occupied=occupied, maximum=2 ** n_objects
    )


# ===== 방법 비교 =====

def original_windows(stream: AugmentedStream, n: int, seed: int) -> List[CounterfactualRecord]:
    """교환 없는 원본 윈도우 (비교 기준선)"""
    rng = derive_rng(seed, "none")
    records = []
    for index in rng.integers(stream.n_windows, size=n):
        window, ref = stream.window(int(index))
        records.append(swap_entities(window, ref, {}, method="none"))
    return records


def generate_records(stream: AugmentedStream, method: str, n: int) -> List[CounterfactualRecord]:
    if method == "caiac":
        return stream.counterfactuals(n)
    if method == "random_swap":
        return [random_swap(stream, k) for k in range(n)]
    return original_windows(stream, n, stream.config.seed)


@log_method_call("evalharness")
def compare_methods(
    dataset: Dataset,
    scores: InfluenceScores,
    augment_config: AugmentConfig,
    eval_config: EvalConfig,
    seed: int = 0,
    jobs: int | None = None,
) -> ComparisonReport:
    """방법별로 같은 시드에서 증강 -> 실현 가능성 -> 지지 집합"""
    stream = augment_dataset(dataset, scores, augment_config)
    raw_states = _collect_states(dataset)
    rows, feasibility, support = [], {}, {}
    for method in eval_config.methods:
        records = generate_records(stream, method, eval_config.n_counterfactuals)
        feasibility[method] = feasibility_replay(
            records, dataset.config, eval_config.k_sims, seed, eval_config.tolerance, method, jobs
        )
        combined = np.concatenate([raw_states, _collect_states(records)], axis=0)
        support[method] = support_estimate(combined, dataset.config, method)
        rows.append({
            "method": method,
            "n_counterfactuals": len(records),
            "pass_rate": feasibility[method].pass_rate,
            "support_occupied": support[method].occupied,
            "support_ratio": support[method].ratio,
            "mean_swapped": float(np.mean([len(r.swapped_entities) for r in records])) if records else 0.0,
        })
    return ComparisonReport(rows=pd.DataFrame(rows), feasibility=feasibility, support=support)


@log_method_call("evalharness")
def support_sweep(
    dataset: Dataset,
    scores: InfluenceScores,
    fractions: Sequence[float],
    augment_config: AugmentConfig,
    n_counterfactuals: int,
    seed: int = 0,
) -> pd.DataFrame:
    """데이터를 줄여가며 원본 대비 CAIAC 증강 지지 비율"""
    order = derive_rng(seed, "support_sweep").permutation(len(dataset))
    rows = []
    for fraction in fractions:
        n = min(max(int(round(len(dataset) * fraction)), 1), len(dataset))
        indices = sorted(order[:n].tolist())
        subset = Dataset(
            trajectories=[dataset.trajectories[i] for i in indices], config=dataset.config, provenance=dataset.provenance
        )
        raw = support_estimate(subset, dataset.config, "none")
        stream = augment_dataset(subset, scores.subset(indices), augment_config)
        combined = np.concatenate([_collect_states(subset), _collect_states(stream.counterfactuals(n_counterfactuals))])
        augmented = support_estimate(combined, dataset.config, "caiac")
        rows.append({
            "fraction": float(fraction),
            "n_trajectories": n,
            "raw_ratio": raw.ratio,
            "caiac_ratio": augmented.ratio,
        })
    return pd.DataFrame(rows, columns=["fraction", "n_trajectories", "raw_ratio", "caiac_ratio"])
