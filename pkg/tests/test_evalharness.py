import json

import numpy as np
import pytest

from src.app.augment.models import AugmentConfig
from src.app.augment.service import augment_dataset
from src.app.dataio.models import Dataset
from src.app.dataio.service import generate_dataset
from src.app.evalharness import service as evalharness
from src.app.evalharness.models import EvalConfig
from src.app.evalharness.repository import save_report
from src.app.influence.service import oracle_distance_scores
from src.app.world.models import WorldConfig
from src.common.error import EvalError


@pytest.fixture
def augment_config():
    return AugmentConfig(theta=0.5, kappa=1, seed=5)


@pytest.fixture
def stream(small_dataset, augment_config):
    return augment_dataset(small_dataset, oracle_distance_scores(small_dataset), augment_config)


def test_original_windows_replay_exactly(stream, small_dataset):
    records = evalharness.generate_records(stream, "none", 30)
    report = evalharness.feasibility_replay(records, small_dataset.config)
    assert report.mode == "exact_replay"
    assert report.method_id == "none"
    assert report.pass_rate == 1.0
    assert all(v.value == 0.0 for v in report.verdicts)


def test_tampered_record_fails(stream, small_dataset):
    record = evalharness.generate_records(stream, "none", 1)[0]
    states = record.states.copy()
    states[-1, 0] += 1e-3
    report = evalharness.feasibility_replay([record.model_copy(update={"states": states})], small_dataset.config)
    assert report.pass_rate == 0.0
    assert report.verdicts[0].value == pytest.approx(1e-3)


def test_caiac_is_more_feasible_than_random_swap(stream, small_dataset):
    caiac = evalharness.feasibility_replay(evalharness.generate_records(stream, "caiac", 200), small_dataset.config)
    control = evalharness.feasibility_replay(
        evalharness.generate_records(stream, "random_swap", 200), small_dataset.config
    )
    assert caiac.pass_rate >= 0.9
    assert control.pass_rate < 0.6
    assert caiac.pass_rate > control.pass_rate


def test_record_layout_checked(stream):
    record = evalharness.generate_records(stream, "none", 1)[0]
    with pytest.raises(EvalError):
        evalharness.feasibility_replay([record], WorldConfig(n_objects=2))


def test_stochastic_feasibility_reports_quantiles(tasks):
    config = WorldConfig(noise_std=0.01)
    dataset = generate_dataset(config, tasks, n_trajectories=4, expert_fraction=0.5, horizon=10, seed=2)
    stream = augment_dataset(dataset, oracle_distance_scores(dataset), AugmentConfig(theta=0.5))
    records = evalharness.generate_records(stream, "none", 10)
    report = evalharness.feasibility_replay(records, config, k_sims=50, seed=1)
    assert report.mode == "gaussian_loglik"
    assert report.k_sims == 50
    assert sorted(report.quantiles) == ["q05", "q25", "q50", "q75", "q95"]
    assert report.pass_rate == 1.0
    again = evalharness.feasibility_replay(records, config, k_sims=50, seed=1)
    assert [v.value for v in again.verdicts] == [v.value for v in report.verdicts]


def test_support_codes_and_estimate(world_config):
    states = np.zeros((4,) + world_config.state_shape)
    states[0, 1:, 0] = [-0.5, -0.5, -0.5, -0.5]
    states[1, 1:, 0] = [0.5, -0.5, -0.5, -0.5]
    states[2, 1:, 0] = [0.5, -0.5, -0.5, -0.5]
    states[3, 1:, 0] = [0.0, 0.5, 0.5, 0.5]
    assert evalharness.support_codes(states).tolist() == [0, 1, 1, 15]
    report = evalharness.support_estimate(states, world_config)
    assert (report.occupied, report.maximum, report.n_states) == (3, 16, 4)
    assert report.ratio == 3 / 16


def test_support_limits(world_config):
    with pytest.raises(EvalError):
        evalharness.support_estimate(np.zeros((1, 22, 2)), WorldConfig(n_objects=21))
    with pytest.raises(EvalError):
        evalharness.support_estimate(np.zeros((0,) + world_config.state_shape), world_config)


def test_support_ratio_ignores_duplicates(small_dataset):
    doubled = Dataset(
        trajectories=small_dataset.trajectories * 2, config=small_dataset.config, provenance=small_dataset.provenance
    )
    raw = evalharness.support_estimate(small_dataset, small_dataset.config)
    again = evalharness.support_estimate(doubled, small_dataset.config)
    assert again.n_states == 2 * raw.n_states
    assert (again.occupied, again.ratio) == (raw.occupied, raw.ratio)


def test_compare_methods(small_dataset, augment_config):
    scores = oracle_distance_scores(small_dataset)
    report = evalharness.compare_methods(small_dataset, scores, augment_config, EvalConfig(n_counterfactuals=20), seed=0)
    rows = report.rows.set_index("method")
    assert list(rows.index) == ["caiac", "random_swap", "none"]
    assert rows.loc["none", "pass_rate"] == 1.0
    raw = evalharness.support_estimate(small_dataset, small_dataset.config)
    assert rows.loc["none", "support_occupied"] == raw.occupied
    assert rows.loc["caiac", "support_occupied"] >= raw.occupied
    assert set(report.summary()) == {"methods", "feasibility", "support"}


def test_support_sweep(small_dataset, augment_config):
    scores = oracle_distance_scores(small_dataset)
    table = evalharness.support_sweep(small_dataset, scores, [0.5, 1.0], augment_config, n_counterfactuals=20, seed=0)
    assert list(table.columns) == ["fraction", "n_trajectories", "raw_ratio", "caiac_ratio"]
    assert table["n_trajectories"].tolist() == [3, 6]
    assert (table["caiac_ratio"] >= table["raw_ratio"]).all()


def test_save_report(tmp_path, stream, small_dataset):
    report = evalharness.feasibility_replay(evalharness.generate_records(stream, "none", 3), small_dataset.config)
    paths = save_report(report.summary(), report.detail(), tmp_path, "feasibility", "none", "abc123")
    assert paths["json"].name == "feasibility_none_abc123.json"
    summary = json.loads(paths["json"].read_text(encoding="utf-8"))
    assert summary["pass_rate"] == 1.0 and summary["config_hash"] == "abc123"
    assert len(paths["csv"].read_text(encoding="utf-8").splitlines()) == 4
