# ============================================
# tests/conftest.py
# ============================================

from pathlib import Path

import numpy as np
import pytest

from components.curriculum import CurriculumConfig, CurriculumState
from components.env import EnvConfig, LocomotionEnv
from components.morphology import load_morphology
from components.network import NetworkConfig
from components.randomization import spawn_streams
from components.rollout import RobotGroup

ROOT = Path(__file__).resolve().parent.parent
ROBOTS = ROOT / "robots"
GOLDEN = Path(__file__).resolve().parent / "golden"

TEMPLATE_NAMES = ["quadruped_a", "quadruped_b", "hexapod", "biped_a", "biped_b", "humanoid"]


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow training experiments")
    parser.addoption("--record-goldens", action="store_true", default=False, help="rewrite tests/golden files")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def robots_dir() -> Path:
    return ROBOTS


@pytest.fixture
def template_3joint():
    return load_morphology(ROBOTS / "template_3joint.morph")


@pytest.fixture
def quadruped():
    return load_morphology(ROBOTS / "quadruped_a.morph")


@pytest.fixture
def biped():
    return load_morphology(ROBOTS / "biped_a.morph")


@pytest.fixture
def templates():
    return [load_morphology(ROBOTS / f"{name}.morph") for name in TEMPLATE_NAMES]


@pytest.fixture
def small_config() -> NetworkConfig:
    """Narrow widths so finite differences and short training runs stay fast."""
    return NetworkConfig(latent_dim=6, phi_hidden=(5,), psi_hidden=(7, 6), core_hidden=(8, 7))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def golden(request):
    """
    Compare text against tests/golden/<name>.

    Run with --record-goldens to (re)write the files after an intended change.
    """
    record = request.config.getoption("--record-goldens")

    def check(name: str, text: str) -> None:
        path = GOLDEN / name
        if record:
            path.write_text(text, encoding="utf-8")
            return
        if not path.exists():
            pytest.fail(f"missing golden file {path}; run with --record-goldens")
        assert text == path.read_text(encoding="utf-8")

    return check


@pytest.fixture
def make_groups():
    """Factory for per-robot environment groups with short episodes."""
    def build(robots, envs=2, horizon=6, seed=0):
        config = EnvConfig(horizon=horizon)
        streams = spawn_streams(seed, len(robots) * envs)
        groups = []
        for index, robot in enumerate(robots):
            members = [LocomotionEnv(robot, streams[index * envs + k], config, env_index=k) for k in range(envs)]
            state = CurriculumState.initial(CurriculumConfig(min_episode_fraction=0.5), horizon)
            group = RobotGroup(index, robot, members, state)
            group.reset()
            groups.append(group)
        return groups

    return build
