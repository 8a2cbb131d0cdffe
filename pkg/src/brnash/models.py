import os
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

FiniteFloat = Annotated[float, Field(allow_inf_nan=False)]
Vec3 = Tuple[FiniteFloat, FiniteFloat, FiniteFloat]

# Defaults not stated by the source experiments are declared here, in one place.
DEFAULT_A_MIN = 0.0
DEFAULT_A_MAX = 1.0
DEFAULT_DT = 0.1
DEFAULT_HORIZON = 10
DEFAULT_SAFETY_RADIUS = 0.25
DEFAULT_AGENT_HALF_SIZE = 0.0625

# Slack for float round-off when checking speeds against their bounds.
SPEED_TOLERANCE = 1e-9


# ============================================================================
# Scenario Configuration
# ============================================================================


class Obstacle(BaseModel):
    """Axis-aligned box obstacle"""

    center: Vec3 = Field(description="Box center in meters")
    half_extents: Vec3 = Field(description="Box half-extents in meters, all > 0")

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def _positive_extents(self) -> "Obstacle":
        if any(h <= 0 for h in self.half_extents):
            raise ValueError("half_extents must all be positive")
        return self


class RewardParams(BaseModel):
    """Weights of the one-step reward shared by every agent"""

    goal_weight: float = Field(
        default=1.0, ge=0, allow_inf_nan=False, description="Weight on goal distance"
    )
    collision_penalty: float = Field(
        default=50.0,
        ge=0,
        allow_inf_nan=False,
        description="Penalty when another agent is closer than safety_radius",
    )
    safety_radius: float = Field(
        default=DEFAULT_SAFETY_RADIUS,
        gt=0,
        allow_inf_nan=False,
        description="Minimum inter-agent distance in meters",
    )
    obstacle_penalty: float = Field(
        default=50.0,
        ge=0,
        allow_inf_nan=False,
        description="Penalty when inside an obstacle inflated by the agent size",
    )
    agent_half_size: float = Field(
        default=DEFAULT_AGENT_HALF_SIZE,
        ge=0,
        allow_inf_nan=False,
        description="Agent half-size in meters used to inflate obstacles",
    )

    model_config = ConfigDict(extra="forbid", frozen=True)


class PriorConfig(BaseModel):
    """Parameters of the uniform default policy"""

    a_min: float = Field(
        default=DEFAULT_A_MIN, ge=0, allow_inf_nan=False, description="Minimum speed (m/s)"
    )
    a_max: float = Field(
        default=DEFAULT_A_MAX, ge=0, allow_inf_nan=False, description="Maximum speed (m/s)"
    )
    horizon: int = Field(
        default=DEFAULT_HORIZON, ge=0, description="Planning horizon H in timesteps"
    )

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def _ordered_bounds(self) -> "PriorConfig":
        if self.a_min > self.a_max:
            raise ValueError(f"a_min ({self.a_min}) exceeds a_max ({self.a_max})")
        return self


class SolverConfig(BaseModel):
    """Configuration for the iterated best response solver"""

    max_iterations: int = Field(default=10, ge=1, description="IBR sweep cap")
    convergence_tolerance: float = Field(
        default=1e-3,
        gt=0,
        allow_inf_nan=False,
        description="Stop once the convergence metric (m/s) drops below this",
    )
    samples_per_response: int = Field(
        default=20_000, ge=1, description="Prior samples K per best response"
    )
    deterministic: bool = Field(
        default=True,
        description="Fixed seeds and bit-identical output across thread counts",
    )
    resample_each_iteration: bool = Field(
        default=False,
        description="Draw a fresh batch per IBR sweep instead of reusing one per planning step",  # noqa: E501
    )
    workers: int = Field(
        default=1, ge=1, description="Threads evaluating sample utilities"
    )
    chunk_size: int = Field(
        default=8_192, ge=1, description="Samples per utility-evaluation chunk"
    )

    model_config = ConfigDict(extra="forbid", frozen=True)


class EpisodeConfig(BaseModel):
    """Receding-horizon episode settings"""

    T: int = Field(default=80, ge=1, description="Executed timesteps per episode")
    dt: float = Field(
        default=DEFAULT_DT, gt=0, allow_inf_nan=False, description="Timestep (s)"
    )
    runs: int = Field(default=50, ge=1, description="Runs per simulation")
    base_seed: int = Field(
        default=0, ge=0, lt=2**64, description="Root seed of every substream"
    )
    goal_threshold: float = Field(
        default=DEFAULT_SAFETY_RADIUS,
        gt=0,
        allow_inf_nan=False,
        description="Final distance (m) under which a goal counts as reached",
    )

    model_config = ConfigDict(extra="forbid", frozen=True)


class AgentSpec(BaseModel):
    """One agent: start, goal and rationality level"""

    start: Vec3 = Field(description="Start position (m)")
    goal: Vec3 = Field(description="Goal position (m)")
    beta: float = Field(
        ge=0, allow_inf_nan=False, description="Rationality level (0 = prior)"
    )

    model_config = ConfigDict(extra="forbid", frozen=True)


class ScenarioConfig(BaseModel):
    """Full experiment description"""

    name: str = Field(default="scenario", description="Scenario label")
    agents: List[AgentSpec] = Field(min_length=1, description="Agents in index order")
    obstacles: List[Obstacle] = Field(default_factory=list)
    reward: RewardParams = Field(default_factory=RewardParams)
    prior: PriorConfig = Field(default_factory=PriorConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    episode: EpisodeConfig = Field(default_factory=EpisodeConfig)
    ego_index: Optional[int] = Field(
        default=None, ge=0, description="Designated ego agent for aggregates"
    )

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def _check_agents(self) -> "ScenarioConfig":
        starts = np.asarray([a.start for a in self.agents], dtype=float)
        for i in range(len(starts)):
            for j in range(i + 1, len(starts)):
                gap = float(np.linalg.norm(starts[i] - starts[j]))
                if gap < self.reward.safety_radius:
                    raise ValueError(
                        f"agents {i} and {j} start {gap:.4f} m apart, "
                        f"closer than safety_radius {self.reward.safety_radius}"
                    )
        # executed mean actions can be slower than any positive floor
        if self.prior.a_min > 0:
            raise ValueError(
                f"prior.a_min must be 0 for receding-horizon episodes, "
                f"got {self.prior.a_min}"
            )
        if self.ego_index is not None and self.ego_index >= len(self.agents):
            raise ValueError(
                f"ego_index {self.ego_index} out of range for {len(self.agents)} agents"
            )
        return self

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def starts(self) -> np.ndarray:
        """Start positions as an (N, 3) array"""
        return np.asarray([a.start for a in self.agents], dtype=float)

    @property
    def goals(self) -> np.ndarray:
        """Goal positions as an (N, 3) array"""
        return np.asarray([a.goal for a in self.agents], dtype=float)

    @property
    def betas(self) -> List[float]:
        return [a.beta for a in self.agents]


# ============================================================================
# Solver and Episode Results
# ============================================================================


class StepDiagnostics(BaseModel):
    """Solver diagnostics for one planning step"""

    timestep: int = Field(ge=0)
    iterations: int = Field(ge=0)
    converged: bool
    convergence_metric: float
    kl: List[float]
    ess: List[float]


class Metrics(BaseModel):
    """Per-episode metrics"""

    travel_distance: List[float] = Field(description="Per-agent path length (m)")
    min_pairwise_distance: Optional[List[List[float]]] = Field(
        default=None,
        description="[t][i] distance to the nearest other agent; None for one agent",
    )
    collision_steps: List[int] = Field(
        description="Per-agent executed steps closer than safety_radius"
    )
    goal_reached: List[bool] = Field(description="Per-agent final distance < threshold")
    final_goal_distance: List[float] = Field(description="Per-agent final distance (m)")
    safety_rate: Optional[float] = Field(
        default=None,
        description="Fraction of executed steps with every pair >= safety_radius",
    )
    min_separation: Optional[float] = Field(
        default=None, description="Smallest pairwise distance over the episode (m)"
    )
    T: int = Field(ge=0, description="Executed timesteps")


class EpisodeResult(BaseModel):
    """Everything recorded while executing one run"""

    run_index: int = Field(ge=0)
    seed: int = Field(ge=0)
    trajectory: np.ndarray = Field(description="(T+1, N, 3) positions")
    executed_actions: np.ndarray = Field(description="(T, N, 3) velocities")
    diagnostics: List[StepDiagnostics] = Field(default_factory=list)
    metrics: Metrics

    model_config = ConfigDict(arbitrary_types_allowed=True)


class AgentAggregate(BaseModel):
    """Across-run statistics for one agent"""

    agent_index: int
    travel_distance_mean: float
    travel_distance_std: float
    collision_rate: float = Field(description="Mean fraction of steps in collision")
    collision_rate_std: float
    goal_reached_rate: float
    goal_reached_rate_std: float


class AggregateTable(BaseModel):
    """Across-run summary of a set of episodes with the same shape"""

    runs: int = Field(ge=1)
    std_estimator: Literal["population"] = Field(
        default="population", description="Standard deviations use ddof=0"
    )
    agents: List[AgentAggregate]
    group_travel_distance_mean: float
    ego_index: Optional[int] = None
    ego_travel_distance_mean: Optional[float] = None
    others_travel_distance_mean: Optional[float] = None
    safety_rate_mean: Optional[float] = None


# ============================================================================
# Experiment Runner Configuration
# ============================================================================


class ExperimentSpec(BaseModel):
    """A batch sweep over ego rationality levels and sample budgets"""

    scenario: str = Field(description="Scenario file path or 'bundled:<name>'")
    ego_betas: Optional[List[float]] = Field(
        default=None, min_length=1, description="Ego beta values to sweep"
    )
    samples: Optional[List[int]] = Field(
        default=None, min_length=1, description="Sample budgets K to sweep"
    )
    runs: Optional[int] = Field(
        default=None, ge=1, description="Runs per cell (default: scenario's runs)"
    )
    seed: Optional[int] = Field(
        default=None, ge=0, lt=2**64, description="Base seed override"
    )
    threads: int = Field(default=1, ge=1, description="Worker threads")
    deterministic: bool = Field(default=False)
    out: Path = Field(description="Output directory")
    ego_index: int = Field(default=0, ge=0, description="Agent whose beta is swept")
    cells: Optional[List[int]] = Field(
        default=None,
        min_length=1,
        description="Run only these cell indices of the sweep, keeping their names",
    )

    @model_validator(mode="after")
    def _check_sweeps(self) -> "ExperimentSpec":
        if self.ego_betas is not None and any(
            not np.isfinite(b) or b < 0 for b in self.ego_betas
        ):
            raise ValueError("ego betas must be finite and non-negative")
        if self.samples is not None and any(k < 1 for k in self.samples):
            raise ValueError("sample budgets must be >= 1")
        if self.cells is not None and any(c < 0 for c in self.cells):
            raise ValueError("cell indices must be >= 0")
        return self


class RunnerConfig(BaseModel):
    """Environment-derived defaults for the batch runner"""

    threads: int = Field(default=1, ge=1, description="Default worker threads")
    log_level: str = Field(default="WARNING", description="Root log level")

    @classmethod
    def from_env(cls) -> "RunnerConfig":
        """Load configuration from environment variables"""
        return cls(
            threads=int(os.getenv("BRNASH_THREADS", "1")),
            log_level=os.getenv("BRNASH_LOG_LEVEL", "WARNING"),
        )
