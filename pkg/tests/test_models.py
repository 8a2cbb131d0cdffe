"""
Tests for Pydantic models in brnash.models.
"""

import pytest
from pydantic import ValidationError

from brnash.models import (
    AgentSpec,
    EpisodeConfig,
    ExperimentSpec,
    Obstacle,
    PriorConfig,
    RewardParams,
    RunnerConfig,
    ScenarioConfig,
    SolverConfig,
)


def _agents(*starts, beta=0.1):
    return [AgentSpec(start=s, goal=(0.0, 0.0, 5.0), beta=beta) for s in starts]


class TestRewardParams:
    """Test RewardParams model."""

    def test_default_values(self):
        """Test default reward weights."""
        params = RewardParams()
        assert params.goal_weight == 1.0
        assert params.collision_penalty == 50.0
        assert params.safety_radius == 0.25
        assert params.obstacle_penalty == 50.0
        assert params.agent_half_size == 0.0625

    def test_validation(self):
        """Test bounds on reward weights."""
        with pytest.raises(ValidationError):
            RewardParams(safety_radius=0)
        with pytest.raises(ValidationError):
            RewardParams(goal_weight=-1)
        with pytest.raises(ValidationError):
            RewardParams(collision_penalty=float("inf"))

    def test_unknown_key_rejected(self):
        """Test that misspelled fields fail loudly."""
        with pytest.raises(ValidationError):
            RewardParams(safety_radious=0.3)


class TestPriorConfig:
    """Test PriorConfig model."""

    def test_defaults(self):
        config = PriorConfig()
        assert (config.a_min, config.a_max, config.horizon) == (0.0, 1.0, 10)

    def test_bounds_must_be_ordered(self):
        """Test a_min may not exceed a_max."""
        PriorConfig(a_min=0.5, a_max=0.5)
        with pytest.raises(ValidationError, match="exceeds"):
            PriorConfig(a_min=0.6, a_max=0.5)

    def test_negative_speed_rejected(self):
        with pytest.raises(ValidationError):
            PriorConfig(a_min=-0.1)


class TestSolverConfig:
    """Test SolverConfig model."""

    def test_defaults(self):
        config = SolverConfig()
        assert config.max_iterations == 10
        assert config.convergence_tolerance == 1e-3
        assert config.samples_per_response == 20_000
        assert config.deterministic is True
        assert config.resample_each_iteration is False

    def test_validation(self):
        with pytest.raises(ValidationError):
            SolverConfig(max_iterations=0)
        with pytest.raises(ValidationError):
            SolverConfig(samples_per_response=0)
        with pytest.raises(ValidationError):
            SolverConfig(convergence_tolerance=0)


class TestObstacle:
    """Test Obstacle model."""

    def test_valid(self):
        box = Obstacle(center=(0, 0, 1), half_extents=(0.5, 0.5, 1))
        assert box.center == (0.0, 0.0, 1.0)

    @pytest.mark.parametrize("extents", [(0, 1, 1), (1, -1, 1)])
    def test_non_positive_extents_rejected(self, extents):
        with pytest.raises(ValidationError, match="positive"):
            Obstacle(center=(0, 0, 0), half_extents=extents)

    def test_non_finite_center_rejected(self):
        with pytest.raises(ValidationError):
            Obstacle(center=(float("nan"), 0, 0), half_extents=(1, 1, 1))


class TestScenarioConfig:
    """Test ScenarioConfig model."""

    def test_defaults_filled(self):
        """Test that omitted sections take their defaults."""
        scenario = ScenarioConfig(agents=_agents((0, 0, 0)))
        assert scenario.reward == RewardParams()
        assert scenario.prior == PriorConfig()
        assert scenario.episode == EpisodeConfig()
        assert scenario.obstacles == []
        assert scenario.n_agents == 1

    def test_array_views(self):
        scenario = ScenarioConfig(agents=_agents((0, 0, 0), (1, 0, 0), beta=0.3))
        assert scenario.starts.shape == (2, 3)
        assert scenario.goals.shape == (2, 3)
        assert scenario.betas == [0.3, 0.3]

    def test_agents_required(self):
        with pytest.raises(ValidationError):
            ScenarioConfig()
        with pytest.raises(ValidationError):
            ScenarioConfig(agents=[])

    def test_overlapping_starts_rejected(self):
        """Test starts closer than the safety radius are rejected."""
        with pytest.raises(ValidationError, match="agents 0 and 1"):
            ScenarioConfig(agents=_agents((0, 0, 0), (0.1, 0, 0)))

    def test_starts_exactly_at_radius_accepted(self):
        ScenarioConfig(agents=_agents((0, 0, 0), (0.25, 0, 0)))

    def test_ego_index_range(self):
        ScenarioConfig(agents=_agents((0, 0, 0), (1, 0, 0)), ego_index=1)
        with pytest.raises(ValidationError, match="ego_index"):
            ScenarioConfig(agents=_agents((0, 0, 0), (1, 0, 0)), ego_index=2)

    def test_speed_floor_rejected(self):
        """Test a positive a_min is refused, since mean actions can be slower."""
        with pytest.raises(ValidationError, match="a_min must be 0"):
            ScenarioConfig(
                agents=_agents((0, 0, 0)), prior=PriorConfig(a_min=0.2, a_max=1.0)
            )
        ScenarioConfig(agents=_agents((0, 0, 0)), prior=PriorConfig(a_min=0.0))

    def test_negative_beta_rejected(self):
        with pytest.raises(ValidationError):
            AgentSpec(start=(0, 0, 0), goal=(1, 0, 0), beta=-0.01)

    def test_frozen(self):
        scenario = ScenarioConfig(agents=_agents((0, 0, 0)))
        with pytest.raises(ValidationError):
            scenario.name = "other"


class TestExperimentSpec:
    """Test ExperimentSpec model."""

    def test_minimal(self, tmp_path):
        spec = ExperimentSpec(scenario="bundled:swap4", out=tmp_path)
        assert spec.ego_betas is None
        assert spec.threads == 1
        assert spec.deterministic is False
        assert spec.ego_index == 0

    def test_sweep_lists_non_empty(self, tmp_path):
        with pytest.raises(ValidationError):
            ExperimentSpec(scenario="x", out=tmp_path, ego_betas=[])
        with pytest.raises(ValidationError):
            ExperimentSpec(scenario="x", out=tmp_path, samples=[])

    def test_sweep_values_validated(self, tmp_path):
        with pytest.raises(ValidationError, match="non-negative"):
            ExperimentSpec(scenario="x", out=tmp_path, ego_betas=[0.1, -0.1])
        with pytest.raises(ValidationError, match=">= 1"):
            ExperimentSpec(scenario="x", out=tmp_path, samples=[100, 0])

    def test_runs_positive(self, tmp_path):
        with pytest.raises(ValidationError):
            ExperimentSpec(scenario="x", out=tmp_path, runs=0)


class TestRunnerConfig:
    """Test environment-derived runner defaults."""

    def test_from_env_defaults(self, monkeypatch):
        monkeypatch.delenv("BRNASH_THREADS", raising=False)
        monkeypatch.delenv("BRNASH_LOG_LEVEL", raising=False)
        config = RunnerConfig.from_env()
        assert config.threads == 1
        assert config.log_level == "WARNING"

    def test_from_env(self, monkeypatch):
        monkeypatch.setenv("BRNASH_THREADS", "8")
        monkeypatch.setenv("BRNASH_LOG_LEVEL", "DEBUG")
        config = RunnerConfig.from_env()
        assert config.threads == 8
        assert config.log_level == "DEBUG"

    def test_invalid_threads(self, monkeypatch):
        monkeypatch.setenv("BRNASH_THREADS", "0")
        with pytest.raises(ValidationError):
            RunnerConfig.from_env()
