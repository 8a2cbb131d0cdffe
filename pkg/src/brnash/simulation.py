"""
Receding-horizon episodes, benchmark scenarios and episode metrics.

At every timestep the solver computes a strategy profile at the current
joint state, each agent executes the first action of its plan, and the
remainder of the plan is discarded.
"""

import logging
from typing import Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import BRNashError, EpisodeError
from .ibr_solver import IBRSolver
from .models import (
    AgentAggregate,
    AgentSpec,
    AggregateTable,
    EpisodeResult,
    Metrics,
    Obstacle,
    ScenarioConfig,
    StepDiagnostics,
)
from .prior_policy import SeededGenerator, UniformPrior
from .world_model import NavigationWorld, step

logger = logging.getLogger(__name__)


# ============================================================================
# Episodes
# ============================================================================


def episode_seed(scenario: ScenarioConfig) -> int:
    """Root seed for a run: the scenario's base seed, or fresh entropy"""
    if scenario.solver.deterministic:
        return scenario.episode.base_seed
    return int(np.random.SeedSequence().entropy % 2**64)


def run_episode(
    scenario: ScenarioConfig, run_index: int, seed: Optional[int] = None
) -> EpisodeResult:
    """
    Execute one receding-horizon run of ``scenario``.

    Substreams are keyed by (run_index, timestep, agent), so a run is
    reproducible on its own regardless of which other runs execute.

    Args:
        scenario: validated scenario
        run_index: index of this run within the simulation
        seed: root seed override; defaults to ``episode_seed(scenario)``

    Returns:
        Trajectory, executed actions, per-step solver diagnostics and metrics

    Raises:
        EpisodeError: if planning or execution fails; carries the timestep
    """
    seed = episode_seed(scenario) if seed is None else seed
    world = NavigationWorld.from_scenario(scenario)
    prior = UniformPrior.from_config(scenario.prior)
    solver = IBRSolver.from_config(world, prior, scenario.solver)
    root = SeededGenerator(seed=seed, stream_id=(run_index,))

    n_agents, dt = scenario.n_agents, scenario.episode.dt
    state = scenario.starts
    trajectory = [state]
    executed: List[np.ndarray] = []
    diagnostics: List[StepDiagnostics] = []

    logger.info(
        "Run %d of %r: %d agents, T=%d, seed=%d",
        run_index,
        scenario.name,
        n_agents,
        scenario.episode.T,
        seed,
    )
    for t in range(scenario.episode.T):
        try:
            profile = solver.solve(state, scenario.betas, root.spawn(t))
            if profile.horizon > 0:
                action = profile.plans[:, 0]
            else:
                action = np.zeros((n_agents, 3))
            state = step(state, action, dt, a_min=world.a_min, a_max=world.a_max)
        except BRNashError as e:
            raise EpisodeError(str(e), timestep=t) from e

        trajectory.append(state)
        executed.append(action)
        diagnostics.append(
            StepDiagnostics(
                timestep=t,
                iterations=profile.iteration,
                converged=profile.converged,
                convergence_metric=profile.convergence,
                kl=profile.kl,
                ess=profile.ess,
            )
        )

    unconverged = sum(not d.converged for d in diagnostics)
    if unconverged:
        logger.warning(
            "Run %d: IBR hit the iteration cap at %d of %d planning steps",
            run_index,
            unconverged,
            len(diagnostics),
        )

    positions = np.stack(trajectory)
    metrics = compute_metrics(
        positions,
        scenario.goals,
        safety_radius=scenario.reward.safety_radius,
        goal_threshold=scenario.episode.goal_threshold,
    )
    return EpisodeResult(
        run_index=run_index,
        seed=seed,
        trajectory=positions,
        executed_actions=np.stack(executed).reshape(-1, n_agents, 3),
        diagnostics=diagnostics,
        metrics=metrics,
    )


# ============================================================================
# Scenarios
# ============================================================================


def position_swap_scenario(
    n_agents: int,
    goal_distance: float = 6.0,
    altitude: float = 1.0,
    beta: float = 0.05,
    **overrides,
) -> ScenarioConfig:
    """
    Agents equally spaced on a circle of diameter ``goal_distance``; each
    goal is the diametrically opposite point.

    Args:
        n_agents: number of agents, >= 2 (even for exact pairing)
        goal_distance: circle diameter, i.e. start-goal distance (m)
        altitude: common z of every start and goal (m)
        beta: rationality level of every agent
        **overrides: other ``ScenarioConfig`` fields (reward, prior, solver,
            episode, obstacles, ego_index, name)

    Examples:
        >>> s = position_swap_scenario(2)
        >>> s.agents[0].start, s.agents[0].goal
        ((3.0, 0.0, 1.0), (-3.0, 0.0, 1.0))
    """
    if n_agents < 2:
        raise ValueError(f"a swap needs at least 2 agents, got {n_agents}")
    if not goal_distance > 0:
        raise ValueError(f"goal_distance must be positive, got {goal_distance}")
    if n_agents % 2:
        logger.warning(
            "%d agents: goals are antipodal points, not other agents' starts",
            n_agents,
        )

    radius = goal_distance / 2.0
    agents = []
    for k in range(n_agents):
        angle = 2.0 * np.pi * k / n_agents
        x, y = radius * np.cos(angle), radius * np.sin(angle)
        # round away -0.0 and 1e-16 noise so configs print cleanly
        x, y = float(np.round(x, 12)) + 0.0, float(np.round(y, 12)) + 0.0
        agents.append(
            AgentSpec(start=(x, y, altitude), goal=(-x + 0.0, -y + 0.0, altitude), beta=beta)
        )
    overrides.setdefault("name", f"swap{n_agents}")
    return ScenarioConfig(agents=agents, **overrides)


# Four boxes of varied size around the workspace centre; one is 1.5 m tall.
WORKSPACE_OBSTACLES = (
    Obstacle(center=(-0.9, 0.0, 0.75), half_extents=(0.3, 0.3, 0.75)),
    Obstacle(center=(0.9, 0.0, 0.5), half_extents=(0.25, 0.25, 0.5)),
    Obstacle(center=(0.0, 0.8, 1.0), half_extents=(0.3, 0.2, 1.0)),
    Obstacle(center=(0.0, -0.8, 0.6), half_extents=(0.2, 0.3, 0.6)),
)


def obstacle_navigation_scenario(
    n_agents: int = 4,
    beta: float = 0.1,
    altitude: float = 1.0,
    zone_offset: float = 2.2,
    spread: float = 2.4,
    **overrides,
) -> ScenarioConfig:
    """
    Agents cross a 4.2 m x 5.4 m workspace from a start zone at
    y = -``zone_offset`` to a goal region at y = +``zone_offset``, past four
    box obstacles placed around the centre.

    Agents are spread evenly along x over ``spread`` meters; agent i's goal
    keeps its x coordinate.
    """
    if n_agents < 1:
        raise ValueError(f"need at least one agent, got {n_agents}")
    xs = np.linspace(-spread / 2, spread / 2, n_agents) if n_agents > 1 else np.zeros(1)
    agents = [
        AgentSpec(
            start=(float(x), -zone_offset, altitude),
            goal=(float(x), zone_offset, altitude),
            beta=beta,
        )
        for x in xs
    ]
    overrides.setdefault("name", f"obstacles{n_agents}")
    overrides.setdefault("obstacles", list(WORKSPACE_OBSTACLES))
    return ScenarioConfig(agents=agents, **overrides)


# ============================================================================
# Metrics
# ============================================================================


def travel_distance(positions) -> float:
    """Path length of one agent's ``(T+1, 3)`` positions"""
    path = np.asarray(positions, dtype=float).reshape(-1, 3)
    if path.shape[0] < 1:
        raise ValueError("need at least one position")
    return float(np.sum(np.sqrt(np.sum(np.diff(path, axis=0) ** 2, axis=-1))))


def _nearest_other(trajectory: np.ndarray) -> np.ndarray:
    """``(T+1, N)`` distance from each agent to its nearest neighbour"""
    gaps = trajectory[:, :, None, :] - trajectory[:, None, :, :]
    dist = np.sqrt(np.sum(gaps**2, axis=-1))
    n_agents = trajectory.shape[1]
    dist[:, np.arange(n_agents), np.arange(n_agents)] = np.inf
    return dist.min(axis=-1)


def min_pairwise_distance(trajectory, agent_index: int, t: int) -> Optional[float]:
    """
    Distance from ``agent_index`` to its nearest other agent at timestep ``t``.

    Returns None for a single-agent trajectory, where it is not applicable.
    """
    positions = np.asarray(trajectory, dtype=float)
    if positions.shape[1] < 2:
        return None
    if not 0 <= agent_index < positions.shape[1]:
        raise IndexError(f"agent index {agent_index} out of range")
    others = np.delete(positions[t], agent_index, axis=0)
    return float(np.sqrt(np.sum((others - positions[t, agent_index]) ** 2, axis=-1)).min())  # noqa: E501


def compute_metrics(
    trajectory: np.ndarray,
    goals: np.ndarray,
    safety_radius: float,
    goal_threshold: float,
) -> Metrics:
    """Metrics of a ``(T+1, N, 3)`` trajectory"""
    n_steps, n_agents = trajectory.shape[0] - 1, trajectory.shape[1]
    final_gap = np.sqrt(np.sum((trajectory[-1] - goals) ** 2, axis=-1))

    nearest: Optional[np.ndarray] = None
    collision_steps = [0] * n_agents
    safety_rate = min_separation = None
    if n_agents > 1:
        nearest = _nearest_other(trajectory)
        collision_steps = [int(c) for c in (nearest < safety_radius).sum(axis=0)]
        executed = nearest[1:]
        if n_steps > 0:
            safety_rate = float(np.mean(executed.min(axis=1) >= safety_radius))
        min_separation = float(nearest.min())

    return Metrics(
        travel_distance=[travel_distance(trajectory[:, i]) for i in range(n_agents)],
        min_pairwise_distance=None if nearest is None else nearest.tolist(),
        collision_steps=collision_steps,
        goal_reached=[bool(g < goal_threshold) for g in final_gap],
        final_goal_distance=final_gap.tolist(),
        safety_rate=safety_rate,
        min_separation=min_separation,
        T=n_steps,
    )


def _metrics_of(result: Union[EpisodeResult, Metrics]) -> Metrics:
    return result.metrics if isinstance(result, EpisodeResult) else result


def aggregate(
    results: Sequence[Union[EpisodeResult, Metrics]],
    ego_index: Optional[int] = None,
) -> AggregateTable:
    """
    Across-run means and population standard deviations (ddof=0).

    Args:
        results: episodes (or their metrics) sharing one scenario shape
        ego_index: agent reported separately from the average of the others

    Raises:
        ValueError: if ``results`` is empty or shapes differ
    """
    metrics = [_metrics_of(r) for r in results]
    if not metrics:
        raise ValueError("cannot aggregate an empty list of results")
    n_agents = len(metrics[0].travel_distance)
    if any(len(m.travel_distance) != n_agents for m in metrics):
        raise ValueError("results have different agent counts")

    travel = np.asarray([m.travel_distance for m in metrics])
    collision_rate = np.asarray(
        [[c / m.T if m.T else 0.0 for c in m.collision_steps] for m in metrics]
    )
    reached = np.asarray([m.goal_reached for m in metrics], dtype=float)

    agents = [
        AgentAggregate(
            agent_index=i,
            travel_distance_mean=float(travel[:, i].mean()),
            travel_distance_std=float(travel[:, i].std(ddof=0)),
            collision_rate=float(collision_rate[:, i].mean()),
            collision_rate_std=float(collision_rate[:, i].std(ddof=0)),
            goal_reached_rate=float(reached[:, i].mean()),
            goal_reached_rate_std=float(reached[:, i].std(ddof=0)),
        )
        for i in range(n_agents)
    ]

    ego_mean = others_mean = None
    if ego_index is not None:
        if not 0 <= ego_index < n_agents:
            raise IndexError(f"ego index {ego_index} out of range")
        ego_mean = float(travel[:, ego_index].mean())
        if n_agents > 1:
            others_mean = float(np.delete(travel, ego_index, axis=1).mean())

    safety = [m.safety_rate for m in metrics if m.safety_rate is not None]
    return AggregateTable(
        runs=len(metrics),
        agents=agents,
        group_travel_distance_mean=float(travel.mean()),
        ego_index=ego_index,
        ego_travel_distance_mean=ego_mean,
        others_travel_distance_mean=others_mean,
        safety_rate_mean=float(np.mean(safety)) if safety else None,
    )


def convergence_rate(results: Iterable[EpisodeResult]) -> float:
    """Fraction of planning steps whose IBR sweep converged"""
    flags = [d.converged for r in results for d in r.diagnostics]
    return float(np.mean(flags)) if flags else 0.0


def samples_to_converge(
    mean_distance_by_samples: Mapping[int, float], rel_tol: float = 0.05
) -> int:
    """
    Smallest sample budget from which every larger budget's group-mean travel
    distance stays within ``rel_tol`` of the largest budget's value.
    """
    if not mean_distance_by_samples:
        raise ValueError("need at least one sample budget")
    budgets = sorted(mean_distance_by_samples)
    reference = mean_distance_by_samples[budgets[-1]]
    answer = budgets[-1]
    for k in reversed(budgets):
        if abs(mean_distance_by_samples[k] - reference) > rel_tol * abs(reference):
            break
        answer = k
    return answer
