import json

import numpy as np
import pytest

from src.app.dataio.models import Dataset
from src.app.influence import service as influence
from src.app.influence.models import DiagGaussian, GaussianMixture, InfluenceScores
from src.app.influence.repository import dumps_scores, load_scores, loads_scores, save_roc, save_scores
from src.common.error import InfluenceError, ParseError
from tests.conftest import make_state


def gaussian(mean, variance) -> DiagGaussian:
    return DiagGaussian(mean=np.asarray(mean, dtype=float), variance=np.asarray(variance, dtype=float))


@pytest.fixture
def oracle(world_config):
    return influence.OracleDynamicsModel(world_config)


def test_kl_diag_gaussian_known_values():
    f = gaussian([0.0], [1.0])
    assert influence.kl_diag_gaussian(f, f) == 0.0
    assert influence.kl_diag_gaussian(f, gaussian([1.0], [1.0])) == pytest.approx(0.5)
    assert influence.kl_diag_gaussian(gaussian([0.0], [1.0]), gaussian([0.0], [2.0])) == pytest.approx(
        0.5 * (np.log(2.0) + 0.5 - 1.0)
    )


def test_single_component_mixture_equals_pairwise_kl():
    f = gaussian([0.1, -0.2], [0.5, 1.5])
    g = gaussian([0.4, 0.3], [1.0, 0.7])
    assert influence.kl_gaussian_vs_mixture(f, GaussianMixture(components=[g])) == pytest.approx(
        influence.kl_diag_gaussian(f, g), abs=1e-12
    )


def test_mixture_kl_is_non_negative_and_matches_monte_carlo():
    f = gaussian([0.0], [1.0])
    g = GaussianMixture(components=[gaussian([0.0], [1.0]), gaussian([10.0], [1.0])])
    approx = influence.kl_gaussian_vs_mixture(f, g)
    assert approx == pytest.approx(np.log(2.0), abs=1e-6)
    assert influence.kl_mc_oracle(f, g, n_samples=20000, seed=0) == pytest.approx(approx, abs=1e-3)
    same = GaussianMixture(components=[f, f, f])
    assert influence.kl_gaussian_vs_mixture(f, same) == 0.0


# f 가 한 성분 가까이 있고 나머지 성분과 멀리 떨어진 경우
MIXTURE_BATTERY = [
    ([0.0], [1.0], [([0.0], [1.0]), ([10.0], [1.0])]),
    ([0.5], [1.0], [([0.0], [1.0]), ([8.0], [1.0])]),
    ([1.0], [0.5], [([1.2], [0.6]), ([-5.0], [2.0])]),
    ([0.0, 0.0], [1.0, 1.0], [([0.3, -0.2], [1.2, 0.8]), ([6.0, 6.0], [1.0, 1.0])]),
]


@pytest.mark.parametrize("mean, variance, components", MIXTURE_BATTERY)
def test_mixture_kl_battery_against_monte_carlo(mean, variance, components):
    f = gaussian(mean, variance)
    g = GaussianMixture(components=[gaussian(m, v) for m, v in components])
    approx = influence.kl_gaussian_vs_mixture(f, g)
    reference = influence.kl_mc_oracle(f, g, n_samples=100_000, seed=0)
    assert approx == pytest.approx(reference, rel=0.1)


def test_mixture_kl_is_bounded_by_closest_component(rng):
    for _ in range(50):
        k = int(rng.integers(2, 6))
        f = gaussian(rng.normal(size=3), rng.uniform(0.2, 2.0, size=3))
        parts = [gaussian(rng.normal(size=3), rng.uniform(0.2, 2.0, size=3)) for _ in range(k)]
        kls = [influence.kl_diag_gaussian(f, c) for c in parts]
        value = influence.kl_gaussian_vs_mixture(f, GaussianMixture(components=parts))
        assert min(kls) - 1e-9 <= value <= min(kls) + np.log(k) + 1e-9


def test_kl_errors():
    with pytest.raises(InfluenceError):
        influence.kl_gaussian_vs_mixture(gaussian([0.0], [1.0]), GaussianMixture(components=[]))
    with pytest.raises(InfluenceError):
        influence.kl_diag_gaussian(gaussian([0.0], [1.0]), gaussian([0.0, 0.0], [1.0, 1.0]))
    with pytest.raises(ValueError):
        gaussian([0.0], [0.0])


def test_oracle_cai_separates_touching_objects(world_config, oracle):
    state = make_state((0.0, 0.0), (0.05, 0.0), (0.5, 0.5), (-0.5, -0.5), (0.9, 0.9))
    scores = influence.cai_score(state, oracle, k=64, action_seed=0)
    assert scores.shape == (5,)
    assert scores[0] > 1.0 and scores[1] > 1.0
    np.testing.assert_array_equal(scores[2:], 0.0)
    # 같은 행동 시드면 같은 점수
    np.testing.assert_array_equal(scores, influence.cai_score(state, oracle, k=64, action_seed=0))


def test_cai_score_requires_two_actions(oracle, world_config):
    with pytest.raises(ValueError):
        influence.cai_score(np.zeros(world_config.state_shape), oracle, k=1, action_seed=0)


def test_cai_does_not_depend_on_action_order(rng):
    means = rng.normal(size=(16, 5, 2))
    variances = rng.uniform(0.1, 1.0, size=(16, 5, 2))
    order = rng.permutation(16)
    np.testing.assert_allclose(
        influence.cai_from_predictions(means[order], variances[order]),
        influence.cai_from_predictions(means, variances),
        rtol=1e-12,
        atol=1e-12,
    )


def test_oracle_cai_does_not_depend_on_action_order(world_config, oracle):
    state = make_state((0.0, 0.0), (0.05, 0.0), (0.5, 0.5), (-0.5, -0.5), (0.9, 0.9))
    actions = influence.sample_actions(world_config, 32, 4)
    states = np.repeat(state[None], 32, axis=0)
    means, variances = oracle.predict(states, actions)
    order = np.random.default_rng(1).permutation(32)
    shuffled = oracle.predict(states, actions[order])
    np.testing.assert_allclose(influence.cai_from_predictions(*shuffled), influence.cai_from_predictions(means, variances))


def test_oracle_scores_give_perfect_roc(small_dataset, oracle):
    scores = influence.score_dataset(small_dataset, oracle, k=16, seed=3)
    assert len(scores) == small_dataset.n_states
    assert scores.lengths == [21] * 6
    labels = influence.ground_truth_labels(small_dataset, small_dataset.config)
    roc = influence.roc_analysis(scores, labels)
    assert roc.auc == 1.0
    assert roc.n_positive + roc.n_negative == small_dataset.n_states * 4

    theta = influence.select_threshold(roc)
    assert theta > 0.0
    sweep = influence.theta_sweep(scores, labels, [0.0, theta])
    assert list(sweep.columns) == ["theta", "tpr", "fpr", "uncontrollable_fraction"]
    assert sweep.loc[1, "tpr"] == 1.0 and sweep.loc[1, "fpr"] == 0.0


def test_scores_follow_trajectories_when_reordered(small_dataset, oracle):
    order = [3, 0, 5, 1, 4, 2]
    shuffled = Dataset(
        trajectories=[small_dataset.trajectories[i] for i in order],
        config=small_dataset.config,
        provenance=small_dataset.provenance,
    )
    base = influence.score_dataset(small_dataset, oracle, k=8, seed=2)
    moved = influence.score_dataset(shuffled, oracle, k=8, seed=2)
    for position, i in enumerate(order):
        np.testing.assert_array_equal(moved.for_trajectory(position), base.for_trajectory(i))


def test_auc_is_invariant_to_monotone_rescaling(rng):
    labels = rng.uniform(size=(300, 5)) < 0.4
    values = np.where(labels, rng.uniform(0.2, 1.0, size=labels.shape), rng.uniform(0.0, 0.8, size=labels.shape))
    base = influence.roc_analysis(values, labels)
    rescaled = influence.roc_analysis(values ** 3 + values, labels)
    assert 0.5 < base.auc < 1.0
    assert rescaled.auc == pytest.approx(base.auc, abs=1e-12)


def test_distance_scorer_matches_labels(small_dataset):
    scores = influence.oracle_distance_scores(small_dataset)
    labels = influence.ground_truth_labels(small_dataset, small_dataset.config)
    np.testing.assert_array_equal(scores.scores, labels.astype(float))
    assert influence.roc_analysis(scores, labels).auc == 1.0


def test_scoring_is_deterministic_across_jobs(small_dataset, oracle):
    one = influence.score_dataset(small_dataset, oracle, k=8, seed=1, jobs=1)
    two = influence.score_dataset(small_dataset, oracle, k=8, seed=1, jobs=2)
    assert one == two
    # chunk 크기와 무관
    assert influence.score_dataset(small_dataset, oracle, k=8, seed=1, chunk_size=5) == one


def test_single_class_roc_rejected():
    labels = np.ones((4, 3), dtype=bool)
    with pytest.raises(InfluenceError):
        influence.roc_analysis(np.zeros((4, 3)), labels)


def test_scores_reject_negative_values():
    with pytest.raises(ValueError):
        InfluenceScores(scores=np.array([[0.0, -1.0]]), lengths=[1])


def test_scores_subset(small_dataset):
    scores = influence.oracle_distance_scores(small_dataset)
    sub = scores.subset([2, 0])
    assert sub.lengths == [21, 21]
    np.testing.assert_array_equal(sub.for_trajectory(0), scores.for_trajectory(2))


def test_scores_sidecar_round_trip(tmp_path, small_dataset):
    scores = influence.oracle_distance_scores(small_dataset)
    path = save_scores(scores, tmp_path / "scores.jsonl")
    assert load_scores(path) == scores
    record = json.loads(path.read_text(encoding="utf-8").split("\n")[1])
    assert "uncontrollable" not in record


def test_scores_sidecar_with_theta(small_dataset):
    scores = influence.oracle_distance_scores(small_dataset)
    lines = dumps_scores(scores, theta=0.5).splitlines()
    assert json.loads(lines[0])["theta"] == 0.5
    first = json.loads(lines[1])
    expected = [j for j in range(1, 5) if scores.scores[0, j] <= 0.5]
    assert first["uncontrollable"] == expected


def test_truncated_sidecar(small_dataset):
    text = dumps_scores(influence.oracle_distance_scores(small_dataset))
    with pytest.raises(ParseError):
        loads_scores("\n".join(text.splitlines()[:-3]))


def test_save_roc_writes_summary(tmp_path, small_dataset):
    scores = influence.oracle_distance_scores(small_dataset)
    labels = influence.ground_truth_labels(small_dataset, small_dataset.config)
    roc = influence.roc_analysis(scores, labels)
    paths = save_roc(roc, tmp_path, "roc_test", 0.5, influence.theta_sweep(scores, labels, [0.5]))
    summary = json.loads(paths["json"].read_text(encoding="utf-8"))
    assert summary["auc"] == 1.0
    assert summary["selected_theta"] == 0.5
    assert paths["sweep"].exists() and paths["csv"].exists()
