from importlib.metadata import version

__version__ = version("brnash")


from .errors import (
    ActionBoundsError,
    BRNashError,
    DimensionMismatchError,
    EpisodeError,
    NonFiniteUtilityError,
    ScenarioError,
    SolverError,
)
from .ibr_solver import IBRSolver, StrategyProfile, convergence_metric
from .models import (
    AgentSpec,
    AggregateTable,
    EpisodeConfig,
    EpisodeResult,
    Metrics,
    Obstacle,
    PriorConfig,
    RewardParams,
    ScenarioConfig,
    SolverConfig,
)
from .prior_policy import SeededGenerator, UniformPrior
from .sampler import (
    WeightedSamples,
    best_response,
    best_response_samples,
    compute_weights,
    effective_sample_size,
    kl_from_prior,
)
from .simulation import (
    aggregate,
    obstacle_navigation_scenario,
    position_swap_scenario,
    run_episode,
)
from .world_model import NavigationWorld, reward, rollout, step, utility

__all__ = [
    "ActionBoundsError",
    "AgentSpec",
    "AggregateTable",
    "BRNashError",
    "DimensionMismatchError",
    "EpisodeConfig",
    "EpisodeError",
    "EpisodeResult",
    "IBRSolver",
    "Metrics",
    "NavigationWorld",
    "NonFiniteUtilityError",
    "Obstacle",
    "PriorConfig",
    "RewardParams",
    "ScenarioConfig",
    "ScenarioError",
    "SeededGenerator",
    "SolverConfig",
    "SolverError",
    "StrategyProfile",
    "UniformPrior",
    "WeightedSamples",
    "aggregate",
    "best_response",
    "best_response_samples",
    "compute_weights",
    "convergence_metric",
    "effective_sample_size",
    "kl_from_prior",
    "obstacle_navigation_scenario",
    "position_swap_scenario",
    "reward",
    "rollout",
    "run_episode",
    "step",
    "utility",
]
