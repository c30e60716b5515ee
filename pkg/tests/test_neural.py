import numpy as np
import pytest

from src.app.dataio.models import SplitSpec
from src.app.dataio.service import split
from src.app.neural import service as neural
from src.app.neural.models import AdamState, GaussianHeadOutput, ModelConfig
from src.app.neural.repository import dumps_checkpoint, load_checkpoint, loads_checkpoint, save_checkpoint
from src.common.constants import VARIANCE_CEIL, VARIANCE_FLOOR
from src.common.error import ArtifactMissingError, ShapeError
from src.common.utils.seeding import derive_rng


@pytest.fixture
def params(world_config):
    dim = world_config.n_entities * world_config.entity_dim
    return neural.init_orthogonal(
        neural.input_dim(world_config), [16, 16], {neural.MEAN_HEAD: dim, neural.VARIANCE_HEAD: dim}, seed=0
    )


def test_orthogonal_init(params):
    w0 = params.hidden[0].weight  # (12, 16): 행이 정규직교
    np.testing.assert_allclose(w0 @ w0.T, np.eye(12), atol=1e-12)
    w1 = params.hidden[1].weight  # (16, 16)
    np.testing.assert_allclose(w1.T @ w1, np.eye(16), atol=1e-12)
    assert all(np.all(layer.bias == 0.0) for layer in params.hidden)


def test_orthogonal_init_is_seeded(world_config):
    dim = world_config.n_entities * world_config.entity_dim
    heads = {neural.MEAN_HEAD: dim, neural.VARIANCE_HEAD: dim}
    a = neural.init_orthogonal(neural.input_dim(world_config), [16, 16], heads, seed=5)
    b = neural.init_orthogonal(neural.input_dim(world_config), [16, 16], heads, seed=5)
    c = neural.init_orthogonal(neural.input_dim(world_config), [16, 16], heads, seed=6)
    for x, y in zip(a.tensors(), b.tensors()):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a.tensors()[0], c.tensors()[0])


def test_variance_floor_and_ceiling():
    v = neural.head_variance(np.array([-1000.0, 0.0, 1000.0]))
    assert v[0] == VARIANCE_FLOOR
    assert v[1] == pytest.approx(np.log(2.0) + VARIANCE_FLOOR)
    assert v[2] == VARIANCE_CEIL


def test_nll_decreases_as_mean_approaches_target():
    target = np.array([[0.3, -0.2]])
    far = [GaussianHeadOutput(mean=np.array([0.0, 0.0]), variance=np.array([0.1, 0.1]))]
    near = [GaussianHeadOutput(mean=np.array([0.25, -0.15]), variance=np.array([0.1, 0.1]))]
    assert neural.nll_loss(near, target) < neural.nll_loss(far, target)
    with pytest.raises(ShapeError):
        neural.nll_loss(near, np.zeros((2, 2)))


def test_forward_shapes(params, world_config):
    state = np.zeros(world_config.state_shape)
    outputs = neural.forward(params, state, np.zeros(2), world_config)
    assert len(outputs) == world_config.n_entities
    assert all(o.mean.shape == (2,) and np.all(o.variance > 0) for o in outputs)


def test_non_finite_input_rejected(params, world_config):
    states = np.full((1,) + world_config.state_shape, np.nan)
    with pytest.raises(ShapeError):
        neural.predict_batch(params, states, np.zeros((1, 2)), world_config)


def test_gradient_check_passes():
    errors = neural.gradient_check(seed=0)
    assert len(errors) == 8  # 은닉 2층 + 헤드 2개, 각각 weight/bias
    assert max(errors.values()) < 1e-4


def test_mse_gradient_matches_finite_differences():
    rng = derive_rng(1, "mse")
    params = neural.init_orthogonal(5, [6], {"action": 2}, seed=1)
    params = params.with_tensors([t + 0.1 * rng.normal(size=t.shape) for t in params.tensors()])
    x = rng.normal(size=(4, 5))
    y = rng.normal(size=(4, 2))
    _, grads = neural.mse_backward(params, x, y, "action")
    numeric = neural.numerical_gradient(lambda p: neural.mse_backward(p, x, y, "action")[0], params)
    assert max(neural.relative_errors(grads.tensors(), numeric)) < 1e-6


def test_adam_rejects_mismatched_gradients(params):
    state = AdamState.zeros_like(params)
    other = neural.init_orthogonal(3, [4], {"action": 2}, seed=0)
    with pytest.raises(ShapeError):
        neural.adam_step(params, other, state)


def test_adam_first_step_moves_by_learning_rate(params):
    state = AdamState.zeros_like(params, learning_rate=1e-3)
    grads = params.with_tensors([np.ones_like(t) for t in params.tensors()])
    updated, new_state = neural.adam_step(params, grads, state)
    assert new_state.step == 1
    np.testing.assert_allclose(updated.tensors()[0], params.tensors()[0] - 1e-3, atol=1e-9)


def test_adam_with_zero_gradients_keeps_params(params):
    state = AdamState.zeros_like(params, learning_rate=1e-3)
    zeros = params.with_tensors([np.zeros_like(t) for t in params.tensors()])
    updated, new_state = neural.adam_step(params, zeros, state)
    assert new_state.step == 1
    for a, b in zip(updated.tensors(), params.tensors()):
        np.testing.assert_array_equal(a, b)


def test_backward_on_duplicated_batch_matches_single(params, world_config):
    rng = derive_rng(2, "duplicate")
    states = rng.uniform(-0.5, 0.5, size=(6,) + world_config.state_shape)
    actions = rng.uniform(-0.05, 0.05, size=(6, 2))
    targets = states + rng.normal(0.0, 0.05, size=states.shape)
    loss, grads = neural.backward(params, (states, actions, targets), world_config)
    doubled = tuple(np.concatenate([x, x]) for x in (states, actions, targets))
    loss2, grads2 = neural.backward(params, doubled, world_config)
    assert loss2 == pytest.approx(loss, rel=1e-12)
    for a, b in zip(grads.tensors(), grads2.tensors()):
        np.testing.assert_allclose(b, a, rtol=1e-9, atol=1e-15)


def test_training_improves_validation_nll(small_dataset):
    train, val = split(small_dataset, SplitSpec(train_fraction=0.5, split_seed=0))
    config = ModelConfig(hidden_sizes=[16, 16], learning_rate=5e-3, steps=200, batch_size=32, eval_every=50)
    result = neural.train_model(train, val, config, seed=0)
    assert list(result.curves.columns) == ["step", "train_nll", "val_nll"]
    assert result.curves["step"].tolist() == [0, 50, 100, 150, 200]
    assert result.best_val_loss < result.curves["val_nll"].iloc[0]
    again = neural.train_model(train, val, config, seed=0)
    for a, b in zip(result.params.tensors(), again.params.tensors()):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_round_trip(tmp_path, params):
    path = save_checkpoint(params, tmp_path / "m.ckpt", {"kind": "test"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"kind": "test"}
    assert loaded.head_dims == params.head_dims
    for a, b in zip(loaded.tensors(), params.tensors()):
        np.testing.assert_array_equal(a, b)
    assert dumps_checkpoint(loaded, meta) == path.read_bytes()


def test_truncated_checkpoint(params):
    data = dumps_checkpoint(params)
    with pytest.raises(ShapeError):
        loads_checkpoint(data[:-8])


def test_missing_checkpoint(tmp_path):
    with pytest.raises(ArtifactMissingError):
        load_checkpoint(tmp_path / "none.ckpt")


def test_transition_model_predict(params, world_config):
    model = neural.GaussianTransitionModel(params, world_config)
    means, variances = model.predict(np.zeros((3,) + world_config.state_shape), np.zeros((3, 2)))
    assert means.shape == variances.shape == (3,) + world_config.state_shape
