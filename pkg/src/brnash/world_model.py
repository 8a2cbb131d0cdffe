"""
Deterministic multi-agent single-integrator dynamics, reward and utility.

Positions and velocities are plain ``numpy`` arrays:

- a joint state is ``(N, 3)``: one 3D position (m) per agent;
- a joint action is ``(N, 3)``: one velocity (m/s) per agent;
- an action sequence is ``(H, 3)``; a set of plans is ``(N, H, 3)``.

Every function here is pure and safe to call from many threads.
"""

from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import ActionBoundsError, DimensionMismatchError
from .models import (
    DEFAULT_A_MAX,
    DEFAULT_A_MIN,
    SPEED_TOLERANCE,
    Obstacle,
    RewardParams,
    ScenarioConfig,
)


class NavigationWorld(BaseModel):
    """Everything the reward and dynamics need besides the state itself"""

    goals: np.ndarray = Field(description="(N, 3) goal positions")
    obstacles: List[Obstacle] = Field(default_factory=list)
    reward: RewardParams = Field(default_factory=RewardParams)
    dt: float = Field(gt=0, description="Timestep (s)")
    a_min: float = Field(default=DEFAULT_A_MIN, ge=0)
    a_max: float = Field(default=DEFAULT_A_MAX, ge=0)

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @classmethod
    def from_scenario(cls, scenario: ScenarioConfig) -> "NavigationWorld":
        return cls(
            goals=scenario.goals,
            obstacles=list(scenario.obstacles),
            reward=scenario.reward,
            dt=scenario.episode.dt,
            a_min=scenario.prior.a_min,
            a_max=scenario.prior.a_max,
        )

    @property
    def n_agents(self) -> int:
        return int(self.goals.shape[0])


def _norm(x: np.ndarray) -> np.ndarray:
    # One norm for every code path so scalar and batched results agree bitwise.
    return np.sqrt(np.sum(x * x, axis=-1))


def _obstacle_arrays(
    obstacles: Sequence[Obstacle], inflate: float
) -> tuple[np.ndarray, np.ndarray]:
    centers = np.asarray([o.center for o in obstacles], dtype=float).reshape(-1, 3)
    halves = np.asarray([o.half_extents for o in obstacles], dtype=float).reshape(-1, 3)
    return centers, halves + inflate


def as_joint_state(joint_state) -> np.ndarray:
    """Validate and return a joint state as a float ``(N, 3)`` array"""
    state = np.asarray(joint_state, dtype=float)
    if state.ndim != 2 or state.shape[1] != 3 or state.shape[0] < 1:
        raise DimensionMismatchError(
            f"joint state must have shape (N>=1, 3), got {state.shape}"
        )
    if not np.all(np.isfinite(state)):
        raise ValueError("joint state contains non-finite positions")
    return state


def validate_actions(
    actions, a_min: float = DEFAULT_A_MIN, a_max: float = DEFAULT_A_MAX
) -> np.ndarray:
    """
    Check that every velocity in ``actions`` (any shape ending in 3) has a
    speed within [a_min, a_max].

    Raises:
        ActionBoundsError: if any speed is out of range or non-finite
    """
    velocities = np.asarray(actions, dtype=float)
    if velocities.shape[-1:] != (3,):
        raise DimensionMismatchError(
            f"actions must end in a dimension of 3, got {velocities.shape}"
        )
    if not np.all(np.isfinite(velocities)):
        raise ActionBoundsError("actions contain non-finite velocities")
    speeds = _norm(velocities)
    bad = (speeds < a_min - SPEED_TOLERANCE) | (speeds > a_max + SPEED_TOLERANCE)
    if np.any(bad):
        worst = float(speeds[bad].flat[0])
        raise ActionBoundsError(
            f"speed {worst:.6g} m/s outside [{a_min}, {a_max}]"
        )
    return velocities


def step(
    joint_state,
    joint_action,
    dt: float,
    *,
    a_min: float = DEFAULT_A_MIN,
    a_max: float = DEFAULT_A_MAX,
) -> np.ndarray:
    """
    Advance every agent one single-integrator step: p' = p + v * dt.

    Args:
        joint_state: ``(N, 3)`` positions
        joint_action: ``(N, 3)`` velocities, one per agent
        dt: timestep in seconds, > 0

    Returns:
        New ``(N, 3)`` positions

    Raises:
        DimensionMismatchError: if the state and action lists differ in length
        ActionBoundsError: if any speed lies outside [a_min, a_max]
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    state = as_joint_state(joint_state)
    velocities = validate_actions(joint_action, a_min, a_max)
    if velocities.shape != state.shape:
        raise DimensionMismatchError(
            f"{state.shape[0]} agents but actions of shape {velocities.shape}"
        )
    return state + velocities * dt


def integrate(initial: np.ndarray, velocities: np.ndarray, dt: float) -> np.ndarray:
    """
    Unvalidated rollout of positions under velocities.

    ``initial`` has shape ``(..., 3)`` and ``velocities`` ``(..., H, 3)``;
    the result is ``(..., H+1, 3)`` and equals repeated application of
    ``p + v * dt`` (cumulative sums add left to right).
    """
    increments = velocities * dt
    stacked = np.concatenate(
        [np.broadcast_to(initial[..., None, :], increments.shape[:-2] + (1, 3)), increments],  # noqa: E501
        axis=-2,
    )
    return np.cumsum(stacked, axis=-2)


def step_rewards(
    ego: np.ndarray,
    goal: np.ndarray,
    others: Optional[np.ndarray],
    params: RewardParams,
    obstacles: Sequence[Obstacle],
) -> np.ndarray:
    """
    Vectorised one-step reward.

    Args:
        ego: ``(..., 3)`` positions of the rewarded agent
        goal: ``(3,)`` its goal
        others: ``(..., M, 3)`` positions of the other agents, broadcastable
            against ``ego[..., None, :]``; None or ``M == 0`` for no others
        params: reward weights
        obstacles: static obstacles

    Returns:
        Rewards with the shape of ``ego[..., 0]``
    """
    value = -params.goal_weight * _norm(ego - goal)

    if others is not None and others.shape[-2] > 0:
        nearest = _norm(ego[..., None, :] - others).min(axis=-1)
        value = value - params.collision_penalty * (nearest < params.safety_radius)

    if obstacles:
        centers, halves = _obstacle_arrays(obstacles, params.agent_half_size)
        offset = np.abs(ego[..., None, :] - centers)
        inside = np.all(offset < halves, axis=-1).any(axis=-1)
        value = value - params.obstacle_penalty * inside

    return value


def _check_index(agent_index: int, n_agents: int) -> None:
    if not 0 <= agent_index < n_agents:
        raise IndexError(f"agent index {agent_index} out of range for {n_agents} agents")


def reward(
    agent_index: int,
    joint_state,
    params: RewardParams,
    goals,
    obstacles: Sequence[Obstacle] = (),
) -> float:
    """
    One-step reward of ``agent_index`` in ``joint_state``.

    -goal_weight * ||p_i - g_i||
    - collision_penalty * [some other agent closer than safety_radius]
    - obstacle_penalty * [p_i inside an obstacle inflated by the agent size]
    """
    state = as_joint_state(joint_state)
    goals = np.asarray(goals, dtype=float).reshape(-1, 3)
    _check_index(agent_index, state.shape[0])
    others = np.delete(state, agent_index, axis=0)
    return float(
        step_rewards(state[agent_index], goals[agent_index], others, params, obstacles)
    )


def _check_plans(plans, n_agents: int) -> np.ndarray:
    try:
        plan_array = np.asarray(plans, dtype=float)
    except ValueError as e:
        raise DimensionMismatchError(f"plans have unequal lengths: {e}") from e
    if plan_array.ndim == 2 and plan_array.shape[0] == n_agents:
        # every plan is empty (H=0)
        plan_array = plan_array.reshape(n_agents, 0, 3)
    if plan_array.ndim != 3 or plan_array.shape[2] != 3:
        raise DimensionMismatchError(
            f"plans must have shape (N, H, 3), got {plan_array.shape}"
        )
    if plan_array.shape[0] != n_agents:
        raise DimensionMismatchError(
            f"{n_agents} agents but {plan_array.shape[0]} plans"
        )
    return plan_array


def rollout(
    initial,
    plans,
    dt: float,
    *,
    a_min: float = DEFAULT_A_MIN,
    a_max: float = DEFAULT_A_MAX,
) -> np.ndarray:
    """
    Roll every agent's plan forward.

    Returns:
        ``(H+1, N, 3)`` joint states; index 0 is ``initial``
    """
    state = as_joint_state(initial)
    plan_array = _check_plans(plans, state.shape[0])
    trajectory = [state]
    for k in range(plan_array.shape[1]):
        trajectory.append(
            step(trajectory[-1], plan_array[:, k], dt, a_min=a_min, a_max=a_max)
        )
    return np.stack(trajectory)


def utility(
    agent_index: int,
    initial,
    plans,
    params: RewardParams,
    goals,
    obstacles: Sequence[Obstacle],
    dt: float,
    *,
    a_min: float = DEFAULT_A_MIN,
    a_max: float = DEFAULT_A_MAX,
) -> float:
    """Sum of ``agent_index``'s rewards over steps 1..H of the rollout"""
    trajectory = rollout(initial, plans, dt, a_min=a_min, a_max=a_max)
    _check_index(agent_index, trajectory.shape[1])
    goals = np.asarray(goals, dtype=float).reshape(-1, 3)
    future = trajectory[1:]
    ego = future[:, agent_index]
    others = np.delete(future, agent_index, axis=1)
    rewards = step_rewards(ego, goals[agent_index], others, params, obstacles)
    return float(np.sum(rewards, axis=-1))


def utility_batch(
    agent_index: int,
    initial,
    candidates: np.ndarray,
    others_trajectory: Optional[np.ndarray],
    world: NavigationWorld,
) -> np.ndarray:
    """
    Utilities of K candidate sequences for one agent, others held fixed.

    Args:
        agent_index: the agent being optimized
        initial: ``(N, 3)`` joint state
        candidates: ``(K, H, 3)`` candidate sequences for ``agent_index``
        others_trajectory: ``(H, N-1, 3)`` positions of the other agents at
            steps 1..H, or None when the agent is alone
        world: goals, obstacles, reward weights and dt

    Returns:
        ``(K,)`` utilities
    """
    state = as_joint_state(initial)
    _check_index(agent_index, state.shape[0])
    paths = integrate(state[agent_index], candidates, world.dt)[..., 1:, :]
    rewards = step_rewards(
        paths,
        world.goals[agent_index],
        others_trajectory,
        world.reward,
        world.obstacles,
    )
    return np.sum(rewards, axis=-1)


def others_trajectory(
    agent_index: int, initial, others_plans, dt: float
) -> Optional[np.ndarray]:
    """
    Positions ``(H, N-1, 3)`` of every agent but ``agent_index`` at steps 1..H.

    ``others_plans`` is ``(N-1, H, 3)``: the plans of the other agents in
    index order. Returns None when ``agent_index`` is alone.
    """
    state = as_joint_state(initial)
    _check_index(agent_index, state.shape[0])
    if state.shape[0] == 1:
        return None
    rest = np.delete(state, agent_index, axis=0)
    plans = _check_plans(others_plans, rest.shape[0])
    paths = integrate(rest, plans, dt)[:, 1:]
    return np.swapaxes(paths, 0, 1)
