import numpy as np
import pytest

from src.app.augment import service as augment
from src.app.augment.models import AugmentConfig, UncontrollableSet
from src.app.dataio import repository
from src.app.dataio.models import WindowRef
from src.app.influence.models import InfluenceScores
from src.app.influence.service import oracle_distance_scores
from src.common.error import AugmentError


@pytest.fixture
def scores(small_dataset):
    return oracle_distance_scores(small_dataset)


@pytest.fixture
def stream(small_dataset, scores):
    return augment.augment_dataset(small_dataset, scores, AugmentConfig(theta=0.5, kappa=1, cf_ratio=0.5, seed=3))


def test_uncontrollable_set_threshold_is_inclusive():
    u = augment.uncontrollable_set(np.array([0.0, 0.05, 0.06, 0.0]), theta=0.05)
    assert u.entities == [1, 3]
    assert 0 not in u
    assert augment.uncontrollable_set({1: 0.2, 2: 0.01}, theta=0.1).entities == [2]


def test_windowed_set_is_intersection():
    rows = [np.array([5.0, 0.0, 0.0, 1.0]), np.array([5.0, 0.0, 1.0, 0.0])]
    u = augment.windowed_uncontrollable_set(rows, theta=0.5, kappa=2)
    assert u.entities == [1]
    assert u.issubset(augment.uncontrollable_set(rows[0], theta=0.5))
    with pytest.raises(AugmentError):
        augment.windowed_uncontrollable_set(rows[:1], theta=0.5, kappa=2)


def test_uncontrollable_set_grows_with_theta(rng):
    scores = rng.exponential(0.5, size=(50, 5))
    thetas = [0.0, 0.05, 0.2, 0.5, 1.0, 5.0]
    for row in scores:
        sets = [augment.uncontrollable_set(row, theta) for theta in thetas]
        for low, high in zip(sets, sets[1:]):
            assert low.issubset(high)
    masks = [augment.window_mask(scores, theta, kappa=2) for theta in thetas]
    for low, high in zip(masks, masks[1:]):
        assert not (low & ~high).any()


def test_window_mask_matches_set_extraction(scores):
    block = scores.for_trajectory(0)
    mask = augment.window_mask(block, theta=0.5, kappa=3)
    assert mask.shape == (len(block) - 3, block.shape[1])
    for t in range(len(mask)):
        expected = augment.windowed_uncontrollable_set(block[t:t + 3], theta=0.5, kappa=3)
        assert np.flatnonzero(mask[t]).tolist() == expected.entities


def test_stream_window_sets_follow_scores(stream, scores):
    for index in (0, 7, stream.n_windows - 1):
        i, t = stream.refs[index]
        expected = augment.windowed_uncontrollable_set(scores.for_trajectory(i)[t:t + 1], theta=0.5, kappa=1)
        u = stream.window_set(index)
        assert u.entities == expected.entities
        assert u.is_empty() == (len(expected) == 0)
    assert UncontrollableSet().is_empty()


def test_swap_replaces_only_shared_entities(small_dataset):
    original = augment.extract_window(small_dataset.trajectories[0], 4, 2)
    donor = augment.extract_window(small_dataset.trajectories[3], 10, 2)
    before = original.states.copy()
    record = augment.swap(original, donor, [3, 4])
    np.testing.assert_array_equal(record.states[:, 3:], donor.states[:, 3:])
    np.testing.assert_array_equal(record.states[:, :3], original.states[:, :3])
    np.testing.assert_array_equal(record.actions, original.actions)
    np.testing.assert_array_equal(original.states, before)
    assert record.swapped_entities == [3, 4]
    assert record.kappa == 2


def test_swap_with_empty_set_is_skipped(small_dataset):
    original = augment.extract_window(small_dataset.trajectories[0], 0, 1)
    donor = augment.extract_window(small_dataset.trajectories[1], 0, 1)
    record = augment.swap(original, donor, UncontrollableSet())
    assert record.skipped
    np.testing.assert_array_equal(record.states, original.states)


def test_swap_layout_mismatch(small_dataset):
    original = augment.extract_window(small_dataset.trajectories[0], 0, 1)
    donor = augment.extract_window(small_dataset.trajectories[1], 0, 2)
    with pytest.raises(AugmentError):
        augment.swap(original, donor, [2])


def test_window_count(small_dataset, scores):
    stream = augment.augment_dataset(small_dataset, scores, AugmentConfig(theta=0.5, kappa=3))
    assert stream.n_windows == 6 * (20 - 3 + 1)


def test_counterfactuals_swap_only_jointly_uncontrollable_entities(stream):
    for k in range(30):
        record = stream.counterfactual(k)
        assert not record.skipped
        original_index = stream.refs.index((record.original_ref.trajectory, record.original_ref.step))
        for j in record.swapped_entities:
            assert j != 0
            assert stream.masks[original_index, j]
            donor = record.donor_refs[j]
            assert stream.masks[stream.refs.index((donor.trajectory, donor.step)), j]


def test_swapped_entities_come_from_their_donors(stream, small_dataset):
    for k in range(40):
        record = stream.counterfactual(k)
        original = small_dataset.trajectories[record.original_ref.trajectory]
        start = record.original_ref.step
        np.testing.assert_array_equal(record.actions, original.actions[start:start + 1])
        for j in range(record.states.shape[1]):
            if j in record.swapped_entities:
                ref = record.donor_refs[j]
                donor = small_dataset.trajectories[ref.trajectory]
                expected = donor.states[ref.step:ref.step + 2, j]
            else:
                expected = original.states[start:start + 2, j]
            np.testing.assert_array_equal(record.states[:, j], expected)


def test_counterfactuals_are_deterministic(small_dataset, scores, stream):
    again = augment.augment_dataset(small_dataset, scores, stream.config)
    for k in range(5):
        a, b = stream.counterfactual(k), again.counterfactual(k)
        np.testing.assert_array_equal(a.states, b.states)
        assert a.donor_refs == b.donor_refs


def test_counterfactual_arrays_match_records(stream):
    batch = stream.counterfactual_arrays(6, start=2)
    for row in range(6):
        record = stream.counterfactual(row + 2)
        np.testing.assert_array_equal(batch.states[row], record.states)
        np.testing.assert_array_equal(batch.actions[row], record.actions)
        np.testing.assert_array_equal(batch.goal_states[row], record.goal_state)
        assert batch.behaviors[row] == record.original_behavior


def test_sample_batch_honors_ratio(stream, rng):
    batch = stream.sample_batch(10, rng)
    assert len(batch) == 10
    assert sum(t.behavior == "counterfactual" for t in batch) == 5


def test_materialize_ratios(small_dataset, scores, stream):
    n = stream.n_windows
    mixed = stream.materialize()
    behaviors = [t.behavior for t in mixed.trajectories]
    assert len(mixed) == 2 * n
    assert behaviors.count("counterfactual") == n
    # 반사실은 고르게 끼워 넣는다
    assert behaviors[:2].count("counterfactual") == 1

    none = augment.augment_dataset(small_dataset, scores, stream.config.model_copy(update={"cf_ratio": 0.0}))
    assert none.materialize() == small_dataset

    only = augment.augment_dataset(small_dataset, scores, stream.config.model_copy(update={"cf_ratio": 1.0}))
    cf = only.materialize()
    assert len(cf) == n
    assert all(t.behavior == "counterfactual" and t.augmentation is not None for t in cf.trajectories)


def test_materialized_dataset_round_trips(tmp_path, stream):
    dataset = stream.materialize()
    loaded = repository.load(repository.save(dataset, tmp_path / "aug.jsonl"))
    assert loaded == dataset
    info = next(t.augmentation for t in loaded.trajectories if t.augmentation is not None)
    assert all(isinstance(ref, WindowRef) for ref in info.donor_refs.values())


def test_no_swappable_windows(small_dataset):
    ones = InfluenceScores(scores=np.ones((small_dataset.n_states, 5)), lengths=[21] * 6, scorer_id="oracle_distance")
    stream = augment.augment_dataset(small_dataset, ones, AugmentConfig(theta=0.5))
    assert len(stream.swappable) == 0
    with pytest.raises(AugmentError):
        stream.counterfactual(0)


def test_scores_must_cover_dataset(small_dataset, scores):
    with pytest.raises(AugmentError):
        augment.augment_dataset(small_dataset, scores.subset([0, 1]), AugmentConfig())


def test_random_swap_control(stream):
    records = [augment.random_swap(stream, k) for k in range(20)]
    assert all(r.method == "random_swap" and r.swapped_entities for r in records)
    # 에이전트도 교체 대상이 될 수 있다
    assert any(0 in r.swapped_entities for r in records)
