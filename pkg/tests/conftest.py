"""
Pytest configuration and shared fixtures for brnash tests.
"""

import numpy as np
import pytest

from brnash.models import EpisodeConfig, PriorConfig, ScenarioConfig, SolverConfig
from brnash.prior_policy import SeededGenerator, UniformPrior
from brnash.simulation import position_swap_scenario
from brnash.world_model import NavigationWorld


@pytest.fixture
def gen() -> SeededGenerator:
    """Root substream with a fixed seed."""
    return SeededGenerator(seed=1234)


@pytest.fixture
def prior() -> UniformPrior:
    """Default uniform prior with a short horizon."""
    return UniformPrior(a_min=0.0, a_max=1.0, horizon=5)


@pytest.fixture
def single_world() -> NavigationWorld:
    """One agent whose goal lies 1 m along x from the origin."""
    return NavigationWorld(goals=np.array([[1.0, 0.0, 0.0]]), dt=0.1)


@pytest.fixture
def pair_world() -> NavigationWorld:
    """Two agents swapping across a 2 m gap."""
    return NavigationWorld(
        goals=np.array([[1.0, 0.0, 1.0], [-1.0, 0.0, 1.0]]), dt=0.1
    )


@pytest.fixture
def pair_state() -> np.ndarray:
    """Start positions matching ``pair_world``."""
    return np.array([[-1.0, 0.0, 1.0], [1.0, 0.0, 1.0]])


@pytest.fixture
def small_swap() -> ScenarioConfig:
    """A two-agent swap small enough to run in well under a second."""
    return position_swap_scenario(
        2,
        goal_distance=2.0,
        beta=0.1,
        prior=PriorConfig(horizon=4),
        solver=SolverConfig(samples_per_response=100, max_iterations=4),
        episode=EpisodeConfig(T=4, runs=2, base_seed=7),
    )


SMALL_SCENARIO_TOML = """\
name = "tiny"

[[agents]]
start = [-1.0, 0.0, 1.0]
goal = [1.0, 0.0, 1.0]
beta = 0.05

[[agents]]
start = [1.0, 0.0, 1.0]
goal = [-1.0, 0.0, 1.0]
beta = 0.05

[prior]
horizon = 3

[solver]
samples_per_response = 50
max_iterations = 3

[episode]
T = 3
runs = 2
base_seed = 11
"""


@pytest.fixture
def scenario_text() -> str:
    """TOML text of a tiny two-agent scenario."""
    return SMALL_SCENARIO_TOML


@pytest.fixture
def scenario_file(tmp_path, scenario_text):
    """The tiny scenario written to a file."""
    path = tmp_path / "tiny.scenario"
    path.write_text(scenario_text)
    return path
