"""
Tests for episodes, scenarios and metrics in brnash.simulation.
"""

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from pydantic import ValidationError

from brnash import simulation
from brnash.errors import ActionBoundsError, EpisodeError
from brnash.models import (
    AgentSpec,
    EpisodeConfig,
    Metrics,
    PriorConfig,
    ScenarioConfig,
    SolverConfig,
)
from brnash.simulation import (
    WORKSPACE_OBSTACLES,
    aggregate,
    compute_metrics,
    convergence_rate,
    episode_seed,
    min_pairwise_distance,
    obstacle_navigation_scenario,
    position_swap_scenario,
    run_episode,
    samples_to_converge,
    travel_distance,
)


def _metrics(distances, collisions=None, reached=None, T=10, safety=None):
    n = len(distances)
    return Metrics(
        travel_distance=distances,
        collision_steps=collisions or [0] * n,
        goal_reached=reached or [True] * n,
        final_goal_distance=[0.0] * n,
        safety_rate=safety,
        T=T,
    )


class TestScenarios:
    """Test scenario builders."""

    def test_two_agent_swap(self):
        scenario = position_swap_scenario(2)
        assert scenario.name == "swap2"
        assert scenario.agents[0].start == (3.0, 0.0, 1.0)
        assert scenario.agents[0].goal == (-3.0, 0.0, 1.0)
        assert scenario.agents[1].start == (-3.0, 0.0, 1.0)

    @pytest.mark.parametrize("n", [2, 4, 6, 8])
    def test_goals_antipodal(self, n):
        scenario = position_swap_scenario(n, goal_distance=6.0, beta=0.05)
        assert scenario.n_agents == n
        np.testing.assert_allclose(
            np.linalg.norm(scenario.starts - scenario.goals, axis=1), 6.0
        )
        np.testing.assert_allclose(scenario.goals[:, :2], -scenario.starts[:, :2])
        assert scenario.betas == [0.05] * n

    def test_even_swap_pairs_starts(self):
        """Test with an even count each goal is another agent's start."""
        scenario = position_swap_scenario(4)
        for goal in scenario.goals:
            assert np.min(np.linalg.norm(scenario.starts - goal, axis=1)) < 1e-9

    def test_overrides(self):
        scenario = position_swap_scenario(
            4, episode=EpisodeConfig(T=5, runs=1), name="custom", ego_index=2
        )
        assert scenario.episode.T == 5
        assert scenario.name == "custom"
        assert scenario.ego_index == 2

    def test_too_few_agents(self):
        with pytest.raises(ValueError):
            position_swap_scenario(1)

    def test_odd_count_warns(self, caplog):
        with caplog.at_level(logging.WARNING, logger="brnash.simulation"):
            position_swap_scenario(3)
        assert "antipodal" in caplog.text

    def test_obstacle_scenario(self):
        scenario = obstacle_navigation_scenario(4)
        assert scenario.name == "obstacles4"
        assert scenario.obstacles == list(WORKSPACE_OBSTACLES)
        assert np.all(scenario.starts[:, 1] == -2.2)
        assert np.all(scenario.goals[:, 1] == 2.2)
        np.testing.assert_allclose(scenario.starts[:, 0], [-1.2, -0.4, 0.4, 1.2])

    def test_obstacle_scenario_single_agent(self):
        scenario = obstacle_navigation_scenario(1)
        assert scenario.agents[0].start == (0.0, -2.2, 1.0)


class TestMetrics:
    """Test per-episode metrics."""

    def test_travel_distance(self):
        path = np.array([[0, 0, 0], [3, 4, 0], [3, 4, 1]], dtype=float)
        assert travel_distance(path) == pytest.approx(6.0)

    def test_travel_distance_stationary(self):
        assert travel_distance(np.zeros((5, 3))) == 0.0

    def test_min_pairwise_single_agent(self):
        assert min_pairwise_distance(np.zeros((3, 1, 3)), 0, 1) is None

    def test_min_pairwise_distance(self):
        traj = np.array([[[0, 0, 0], [3, 0, 0], [0, 1, 0]]], dtype=float)
        assert min_pairwise_distance(traj, 0, 0) == pytest.approx(1.0)
        assert min_pairwise_distance(traj, 1, 0) == pytest.approx(3.0)
        with pytest.raises(IndexError):
            min_pairwise_distance(traj, 3, 0)

    @settings(max_examples=30)
    @given(arrays(np.float64, (4, 2, 3), elements=st.floats(-10, 10)))
    def test_min_pairwise_symmetric(self, traj):
        """Test two agents see the same nearest distance."""
        for t in range(4):
            assert min_pairwise_distance(traj, 0, t) == min_pairwise_distance(traj, 1, t)

    def test_compute_metrics(self):
        """Test collision counts agree with the pairwise distances."""
        traj = np.array(
            [
                [[0.0, 0, 0], [1.0, 0, 0]],
                [[0.2, 0, 0], [0.8, 0, 0]],
                [[0.4, 0, 0], [0.6, 0, 0]],
                [[0.6, 0, 0], [0.4, 0, 0]],
            ]
        )
        goals = np.array([[1.0, 0, 0], [0.0, 0, 0]])
        m = compute_metrics(traj, goals, safety_radius=0.25, goal_threshold=0.5)
        assert m.T == 3
        assert m.travel_distance == pytest.approx([0.6, 0.6])
        assert m.collision_steps == [2, 2]
        nearest = np.asarray(m.min_pairwise_distance)
        assert list((nearest < 0.25).sum(axis=0)) == m.collision_steps
        assert m.goal_reached == [True, True]
        assert m.final_goal_distance == pytest.approx([0.4, 0.4])
        assert m.safety_rate == pytest.approx(1 / 3)
        assert m.min_separation == pytest.approx(0.2)

    def test_compute_metrics_single_agent(self):
        traj = np.zeros((3, 1, 3))
        m = compute_metrics(traj, np.ones((1, 3)), safety_radius=0.25, goal_threshold=0.25)
        assert m.min_pairwise_distance is None
        assert m.collision_steps == [0]
        assert m.safety_rate is None
        assert m.goal_reached == [False]


class TestAggregate:
    """Test across-run aggregation."""

    def test_population_std(self):
        """Test two runs of 6 and 8 give mean 7 and std 1."""
        table = aggregate([_metrics([6.0]), _metrics([8.0])])
        assert table.runs == 2
        assert table.std_estimator == "population"
        assert table.agents[0].travel_distance_mean == pytest.approx(7.0)
        assert table.agents[0].travel_distance_std == pytest.approx(1.0)

    def test_ego_split(self):
        table = aggregate(
            [_metrics([5.0, 7.0, 9.0]), _metrics([7.0, 9.0, 11.0])], ego_index=0
        )
        assert table.ego_travel_distance_mean == pytest.approx(6.0)
        assert table.others_travel_distance_mean == pytest.approx(9.0)
        assert table.group_travel_distance_mean == pytest.approx(8.0)

    def test_rates(self):
        table = aggregate(
            [
                _metrics([1.0, 1.0], collisions=[2, 0], reached=[True, False], safety=0.8),
                _metrics([1.0, 1.0], collisions=[0, 0], reached=[True, True], safety=1.0),
            ]
        )
        assert table.agents[0].collision_rate == pytest.approx(0.1)
        assert table.agents[1].goal_reached_rate == pytest.approx(0.5)
        assert table.safety_rate_mean == pytest.approx(0.9)

    def test_rate_spreads(self):
        """Test collision and goal rates carry population standard deviations."""
        table = aggregate(
            [
                _metrics([1.0, 1.0], collisions=[2, 0], reached=[True, False]),
                _metrics([1.0, 1.0], collisions=[0, 0], reached=[True, True]),
            ]
        )
        assert table.agents[0].collision_rate_std == pytest.approx(0.1)
        assert table.agents[1].collision_rate_std == 0.0
        assert table.agents[0].goal_reached_rate_std == 0.0
        assert table.agents[1].goal_reached_rate_std == pytest.approx(0.5)

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_mixed_agent_counts(self):
        with pytest.raises(ValueError):
            aggregate([_metrics([1.0]), _metrics([1.0, 2.0])])

    def test_bad_ego(self):
        with pytest.raises(IndexError):
            aggregate([_metrics([1.0])], ego_index=1)

    def test_samples_to_converge(self):
        curve = {100: 10.0, 1000: 8.2, 10_000: 8.0, 100_000: 8.0}
        assert samples_to_converge(curve, rel_tol=0.05) == 1000
        assert samples_to_converge(curve, rel_tol=0.01) == 10_000

    def test_samples_to_converge_single(self):
        assert samples_to_converge({500: 3.0}) == 500
        with pytest.raises(ValueError):
            samples_to_converge({})


class TestRunEpisode:
    """Test receding-horizon episodes."""

    def test_shapes(self, small_swap):
        result = run_episode(small_swap, run_index=0)
        assert result.trajectory.shape == (5, 2, 3)
        assert result.executed_actions.shape == (4, 2, 3)
        assert len(result.diagnostics) == 4
        assert [d.timestep for d in result.diagnostics] == [0, 1, 2, 3]
        assert result.seed == small_swap.episode.base_seed
        assert result.metrics.T == 4
        np.testing.assert_array_equal(result.trajectory[0], small_swap.starts)

    def test_trajectory_follows_actions(self, small_swap):
        """Test each executed step is exactly p + v * dt."""
        result = run_episode(small_swap, run_index=0)
        dt = small_swap.episode.dt
        for t in range(4):
            np.testing.assert_array_equal(
                result.trajectory[t + 1],
                result.trajectory[t] + result.executed_actions[t] * dt,
            )

    def test_reproducible(self, small_swap):
        a = run_episode(small_swap, run_index=1)
        b = run_episode(small_swap, run_index=1)
        np.testing.assert_array_equal(a.trajectory, b.trajectory)
        assert a.metrics == b.metrics

    def test_runs_differ(self, small_swap):
        a = run_episode(small_swap, run_index=0)
        b = run_episode(small_swap, run_index=1)
        assert not np.array_equal(a.trajectory, b.trajectory)

    def test_seed_override(self, small_swap):
        result = run_episode(small_swap, run_index=0, seed=99)
        assert result.seed == 99

    def test_non_deterministic_seed(self, small_swap):
        scenario = small_swap.model_copy(
            update={"solver": SolverConfig(deterministic=False)}
        )
        seeds = {episode_seed(scenario) for _ in range(3)}
        assert len(seeds) > 1

    def test_agents_progress_toward_goals(self):
        scenario = position_swap_scenario(
            2,
            goal_distance=4.0,
            beta=0.5,
            prior=PriorConfig(horizon=5),
            solver=SolverConfig(samples_per_response=1000),
            episode=EpisodeConfig(T=10, runs=1),
        )
        result = run_episode(scenario, 0)
        start_gap = np.linalg.norm(scenario.starts - scenario.goals, axis=1)
        assert np.all(np.asarray(result.metrics.final_goal_distance) < start_gap)

    def test_speed_floor_scenario_rejected(self):
        """Test a scenario with a positive a_min never reaches an episode."""
        with pytest.raises(ValidationError, match="a_min"):
            position_swap_scenario(
                2, beta=0.0, prior=PriorConfig(a_min=0.2, a_max=1.0, horizon=3)
            )

    def test_step_failure_aborts(self, small_swap, mocker):
        """Test a rejected step ends the episode with its timestep."""
        real_step = simulation.step
        calls = {"n": 0}

        def failing_step(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 3:
                raise ActionBoundsError("speed 1.5 m/s outside [0.0, 1.0]")
            return real_step(*args, **kwargs)

        mocker.patch("brnash.simulation.step", side_effect=failing_step)
        with pytest.raises(EpisodeError) as exc:
            run_episode(small_swap, 0)
        assert exc.value.timestep == 2
        assert isinstance(exc.value.__cause__, ActionBoundsError)

    def test_positions_move_at_most_a_max_dt(self, small_swap):
        """Test no agent jumps further than the top speed allows in one step."""
        result = run_episode(small_swap, 0)
        jumps = np.linalg.norm(np.diff(result.trajectory, axis=0), axis=-1)
        limit = small_swap.prior.a_max * small_swap.episode.dt
        assert np.all(jumps <= limit + 1e-12)

    def test_agent_at_goal_stays_put(self):
        """Test an agent starting on its goal, with the others far off, barely moves."""
        scenario = ScenarioConfig(
            agents=[
                AgentSpec(start=(0.0, 0.0, 1.0), goal=(0.0, 0.0, 1.0), beta=0.1),
                AgentSpec(start=(3.0, 0.0, 1.0), goal=(3.0, 2.0, 1.0), beta=0.1),
            ],
            prior=PriorConfig(horizon=5),
            solver=SolverConfig(samples_per_response=1000),
            episode=EpisodeConfig(T=20, runs=1),
        )
        result = run_episode(scenario, 0)
        assert result.metrics.travel_distance[0] < 0.5

    def test_single_agent(self):
        scenario = obstacle_navigation_scenario(
            1,
            prior=PriorConfig(horizon=4),
            solver=SolverConfig(samples_per_response=200),
            episode=EpisodeConfig(T=3, runs=1),
        )
        result = run_episode(scenario, 0)
        assert result.metrics.min_pairwise_distance is None
        assert 0.0 <= convergence_rate([result]) <= 1.0

    def test_convergence_rate(self, small_swap):
        result = run_episode(small_swap, 0)
        expected = np.mean([d.converged for d in result.diagnostics])
        assert convergence_rate([result]) == pytest.approx(expected)
        assert convergence_rate([]) == 0.0
