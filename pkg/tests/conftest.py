import numpy as np
import pytest

from src.app.cli.models import default_tasks
from src.app.dataio.service import generate_dataset
from src.app.world.models import TaskSpec, WorldConfig


@pytest.fixture
def world_config() -> WorldConfig:
    return WorldConfig()


@pytest.fixture
def tasks():
    return default_tasks()


@pytest.fixture
def task_a(tasks) -> TaskSpec:
    return tasks[0]


@pytest.fixture
def small_dataset(world_config, tasks):
    # 전문가 2개 + 무작위 4개, 짧은 horizon
    return generate_dataset(world_config, tasks, n_trajectories=6, expert_fraction=1 / 3, horizon=20, seed=7)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


def make_state(agent, *objects) -> np.ndarray:
    return np.asarray([agent, *objects], dtype=np.float64)
