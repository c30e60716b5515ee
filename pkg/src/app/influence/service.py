"""
인과 행동 영향 (Causal Action Influence) 점수

C^j(s) = (1/K) sum_i KL( p(s'_j | s, a_i) || (1/K) sum_k p(s'_j | s, a_k) ),  a_i ~ U(action box)
가우시안 대 혼합 분포 KL 은 변분 근사 -log sum_k (1/K) exp(-KL(f || g_k)) 로 계산한다.
"""

from functools import partial
from typing import Protocol, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp
from scipy.stats import norm
from sklearn.metrics import auc, roc_curve

from src.app.dataio.models import Dataset, Trajectory
from src.app.influence.models import DiagGaussian, GaussianMixture, InfluenceScores, RocReport
from src.app.world import service as world
from src.app.world.models import FactoredState, WorldConfig
from src.common.constants import VARIANCE_FLOOR
from src.common.error import ErrorCode, InfluenceError
from src.common.utils.logger import log_method_call, set_logger
from src.common.utils.parallel import parallel_map
from src.common.utils.seeding import derive_rng, derive_seed

logger = set_logger("influence")


class TransitionModel(Protocol):
    config: WorldConfig

    def predict(self, states: np.ndarray, actions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ...


class OracleDynamicsModel:
    """실제 월드 동역학을 전이 모델 인터페이스로 감싼 어댑터 (분산은 하한값으로 고정)"""

    def __init__(self, config: WorldConfig):
        self.config = config
        self._noiseless = config.model_copy(update={"noise_std": 0.0})

    def predict(self, states: np.ndarray, actions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        means = world.step_batch(states, actions, self._noiseless)
        return means, np.full_like(means, VARIANCE_FLOOR)


# ===== KL =====

def kl_diag_gaussian(f: DiagGaussian, g: DiagGaussian) -> float:
    if f.dim != g.dim:
        raise InfluenceError.of(ErrorCode.Influence.DIMENSION_MISMATCH, f=f.dim, g=g.dim)
    return float(np.sum(
        0.5 * (np.log(g.variance / f.variance) + (f.variance + (f.mean - g.mean) ** 2) / g.variance - 1.0)
    ))


def kl_gaussian_vs_mixture(f: DiagGaussian, g: GaussianMixture) -> float:
    """변분 근사. K = 1 이면 kl_diag_gaussian 과 정확히 같다"""
    if g.k == 0:
        raise InfluenceError.of(ErrorCode.Influence.EMPTY_MIXTURE)
    kls = np.array([kl_diag_gaussian(f, c) for c in g.components])
    return max(float(np.log(g.k) - logsumexp(-kls)), 0.0)


def _mixture_logpdf(x: np.ndarray, g: GaussianMixture) -> np.ndarray:
    means, variances = g.stacked()
    # (n, K)
    component = norm.logpdf(x[:, None, :], loc=means[None], scale=np.sqrt(variances)[None]).sum(axis=-1)
    return logsumexp(component, axis=1) - np.log(g.k)


def kl_mc_oracle(f: DiagGaussian, g: GaussianMixture, n_samples: int, seed: int) -> float:
    """몬테카를로 KL 추정 (x ~ f)"""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if g.k == 0:
        raise InfluenceError.of(ErrorCode.Influence.EMPTY_MIXTURE)
    rng = derive_rng(seed, "kl_mc")
    x = f.mean + np.sqrt(f.variance) * rng.standard_normal((n_samples, f.dim))
    log_f = norm.logpdf(x, loc=f.mean, scale=np.sqrt(f.variance)).sum(axis=1)
    return float(np.mean(log_f - _mixture_logpdf(x, g)))


def pairwise_kl(means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """(..., K, D) -> (..., K, K), [i, k] = KL(N_i || N_k)"""
    mf, vf = means[..., :, None, :], variances[..., :, None, :]
    mg, vg = means[..., None, :, :], variances[..., None, :, :]
    return np.sum(0.5 * (np.log(vg / vf) + (vf + (mf - mg) ** 2) / vg - 1.0), axis=-1)


def cai_from_predictions(means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """K 개 행동에 대한 예측 (..., K, E, D) 에서 엔티티별 CAI (..., E)"""
    k = means.shape[-3]
    means = np.moveaxis(means, -2, -3)
    variances = np.moveaxis(variances, -2, -3)
    kl = pairwise_kl(means, variances)
    per_action = np.log(float(k)) - logsumexp(-kl, axis=-1)
    return np.maximum(per_action.mean(axis=-1), 0.0)


def sample_actions(config: WorldConfig, k: int, action_seed: int) -> np.ndarray:
    m = config.max_action_step
    return np.random.default_rng(action_seed).uniform(-m, m, size=(k, config.entity_dim))


def cai_score(state: FactoredState, model: TransitionModel, k: int, action_seed: int) -> np.ndarray:
    """상태 하나에 대한 엔티티별 CAI 점수 (E,)"""
    if k < 2:
        raise ValueError("K must be >= 2")
    config = model.config
    state = world.validate_state(state, config)
    actions = sample_actions(config, k, action_seed)
    means, variances = model.predict(np.repeat(state[None], k, axis=0), actions)
    return cai_from_predictions(means, variances)


def _check_layout(config: WorldConfig, model: TransitionModel) -> None:
    if config.state_shape != model.config.state_shape:
        raise InfluenceError.of(
            ErrorCode.Influence.DIMENSION_MISMATCH, dataset=config.state_shape, model=model.config.state_shape
        )


def score_trajectory(trajectory: Trajectory, model: TransitionModel, k: int, seed: int, chunk_size: int = 64) -> np.ndarray:
    """궤적의 모든 상태 점수 (T+1, E). 행동 시드는 (seed, 궤적 seed, step) 에서 파생"""
    config = model.config
    n, e, d = trajectory.states.shape
    out = np.empty((n, e))
    for start in range(0, n, chunk_size):
        steps = range(start, min(start + chunk_size, n))
        actions = np.stack([sample_actions(config, k, derive_seed(seed, trajectory.seed, t)) for t in steps])
        states = np.repeat(trajectory.states[start:start + len(steps)][:, None], k, axis=1)
        means, variances = model.predict(states.reshape(-1, e, d), actions.reshape(-1, d))
        out[start:start + len(steps)] = cai_from_predictions(
            means.reshape(len(steps), k, e, d), variances.reshape(len(steps), k, e, d)
        )
    return out


@log_method_call("influence")
def score_dataset(
    dataset: Dataset, model: TransitionModel, k: int, seed: int, jobs: int | None = None, chunk_size: int = 64
) -> InfluenceScores:
    if k < 2:
        raise ValueError("K must be >= 2")
    _check_layout(dataset.config, model)
    logger.info(f"CAI 점수 계산: {len(dataset)}개 궤적, {dataset.n_states}개 상태, K={k}")
    per_trajectory = parallel_map(
        partial(score_trajectory, model=model, k=k, seed=seed, chunk_size=chunk_size),
        dataset.trajectories,
        jobs,
    )
    return InfluenceScores(
        scores=np.concatenate(per_trajectory, axis=0) if per_trajectory else np.zeros((0, dataset.config.n_entities)),
        lengths=[len(t.states) for t in dataset.trajectories],
        action_sample_count=k,
        scorer_id="cai",
    )


def oracle_distance_scores(dataset: Dataset) -> InfluenceScores:
    """거리 기반 정답 점수 (영향을 받으면 1, 아니면 0)"""
    labels = ground_truth_labels(dataset, dataset.config)
    return InfluenceScores(
        scores=labels.astype(np.float64),
        lengths=[len(t.states) for t in dataset.trajectories],
        action_sample_count=0,
        scorer_id="oracle_distance",
    )


def ground_truth_labels(dataset: Dataset, config: WorldConfig) -> np.ndarray:
    """(전체 상태 수, E) bool, 에이전트 열은 항상 True"""
    if not dataset.trajectories:
        return np.zeros((0, config.n_entities), dtype=bool)
    return world.influence_labels(dataset.all_states(), config)


# ===== ROC =====

def _object_columns(scores: InfluenceScores | np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    values = scores.scores if isinstance(scores, InfluenceScores) else np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if values.shape != labels.shape:
        raise InfluenceError.of(ErrorCode.Influence.DIMENSION_MISMATCH, scores=values.shape, labels=labels.shape)
    # 에이전트 열은 정의상 항상 양성이므로 제외한다
    return values[:, 1:].ravel(), labels[:, 1:].ravel()


def roc_analysis(scores: InfluenceScores | np.ndarray, labels: np.ndarray) -> RocReport:
    values, truth = _object_columns(scores, labels)
    n_pos = int(truth.sum())
    n_neg = int(truth.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise InfluenceError.of(ErrorCode.Influence.SINGLE_CLASS, n_positive=n_pos, n_negative=n_neg)
    fpr, tpr, thresholds = roc_curve(truth, values, drop_intermediate=False)
    return RocReport(
        fpr=fpr,
        tpr=tpr,
        thresholds=thresholds,
        auc=float(auc(fpr, tpr)),
        n_positive=n_pos,
        n_negative=n_neg,
    )


def select_threshold(roc: RocReport) -> float:
    """TPR - FPR 최대 지점의 theta

    roc_curve 의 threshold t 는 "score >= t 이면 양성" 이고 uncontrollable 판정은 C <= theta 이므로
    t 와 바로 아래 점수의 중간값을 theta 로 쓴다.
    """
    j = roc.tpr - roc.fpr
    j[~np.isfinite(roc.thresholds)] = -np.inf
    best = int(np.argmax(j))
    if best + 1 < len(roc.thresholds):
        theta = 0.5 * (roc.thresholds[best] + roc.thresholds[best + 1])
    else:
        theta = 0.0
    return max(float(theta), 0.0)


def theta_sweep(scores: InfluenceScores | np.ndarray, labels: np.ndarray, thetas: Sequence[float]) -> pd.DataFrame:
    """theta 별 (TPR, FPR, uncontrollable 비율). 영향 예측은 C > theta"""
    values, truth = _object_columns(scores, labels)
    rows = []
    for theta in thetas:
        predicted = values > theta
        rows.append({
            "theta": float(theta),
            "tpr": float(predicted[truth].mean()) if truth.any() else np.nan,
            "fpr": float(predicted[~truth].mean()) if (~truth).any() else np.nan,
            "uncontrollable_fraction": float(np.mean(~predicted)) if values.size else np.nan,
        })
    return pd.DataFrame(rows, columns=["theta", "tpr", "fpr", "uncontrollable_fraction"])
