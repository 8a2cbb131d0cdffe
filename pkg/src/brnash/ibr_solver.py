import logging
from typing import List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import DimensionMismatchError, NonFiniteUtilityError, SolverError
from .models import SolverConfig
from .prior_policy import ActionPrior, SeededGenerator
from .sampler import best_response_samples
from .world_model import NavigationWorld, as_joint_state

logger = logging.getLogger(__name__)


class StrategyProfile(BaseModel):
    """One planned (expected) action sequence per agent plus IBR diagnostics"""

    plans: np.ndarray = Field(description="(N, H, 3) planned velocities")
    iteration: int = Field(ge=0, description="IBR sweeps performed")
    converged: bool = Field(default=False)
    kl: List[float] = Field(default_factory=list, description="Per-agent KL (nats)")
    ess: List[float] = Field(default_factory=list, description="Per-agent ESS")
    convergence_history: List[float] = Field(
        default_factory=list, description="Convergence metric after each sweep"
    )

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def n_agents(self) -> int:
        return int(self.plans.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.plans.shape[1])

    @property
    def convergence(self) -> float:
        """Last recorded convergence metric (inf before any sweep)"""
        if not self.convergence_history:
            return float("inf")
        return self.convergence_history[-1]


def _plans_of(profile: Union[StrategyProfile, np.ndarray]) -> np.ndarray:
    if isinstance(profile, StrategyProfile):
        return profile.plans
    return np.asarray(profile, dtype=float)


def convergence_metric(
    previous: Union[StrategyProfile, np.ndarray],
    current: Union[StrategyProfile, np.ndarray],
) -> float:
    """
    Largest, over agents, mean per-step Euclidean change in planned velocity.

    Raises:
        DimensionMismatchError: if the two profiles differ in shape
    """
    a, b = _plans_of(previous), _plans_of(current)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"profile shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    change = np.sqrt(np.sum((a - b) ** 2, axis=-1))
    return float(np.max(np.mean(change, axis=1)))


class IBRSolver:
    """
    Iterated best response over bounded-rational agents.

    Starting from zero-velocity plans, agents are swept in ascending index
    order; each agent's plan is replaced by its importance-sampled best
    response to the current plans of all others. Sweeps stop when the
    convergence metric drops below the tolerance or after
    ``max_iterations`` sweeps.

    Examples:
        >>> world = NavigationWorld(goals=np.array([[3.0, 0, 1], [-3.0, 0, 1]]), dt=0.1)
        >>> solver = IBRSolver(world, UniformPrior(horizon=10), samples_per_response=5000)
        >>> profile = solver.solve(
        ...     np.array([[-3.0, 0, 1], [3.0, 0, 1]]),
        ...     betas=[0.1, 0.1],
        ...     gen=SeededGenerator(seed=0),
        ... )
        >>> profile.plans.shape
        (2, 10, 3)
    """

    def __init__(
        self,
        world: NavigationWorld,
        prior: ActionPrior,
        max_iterations: int = 10,
        convergence_tolerance: float = 1e-3,
        samples_per_response: int = 20_000,
        deterministic: bool = True,
        resample_each_iteration: bool = False,
        workers: int = 1,
        chunk_size: int = 8_192,
    ):
        """
        Initialize the solver.

        Args:
            world: goals, obstacles, reward weights, dt and speed bounds
            prior: every agent's default policy (proposal distribution)
            max_iterations: IBR sweep cap (default: 10)
            convergence_tolerance: stop once the profile changes by less
                than this (m/s, default: 1e-3)
            samples_per_response: prior samples K per best response
            deterministic: recorded for callers that seed from it
            resample_each_iteration: draw a fresh batch per sweep instead
                of one batch per agent reused across sweeps
            workers: threads used to evaluate sample utilities
            chunk_size: samples per utility-evaluation chunk
        """
        self.world = world
        self.prior = prior
        self.config = SolverConfig(
            max_iterations=max_iterations,
            convergence_tolerance=convergence_tolerance,
            samples_per_response=samples_per_response,
            deterministic=deterministic,
            resample_each_iteration=resample_each_iteration,
            workers=workers,
            chunk_size=chunk_size,
        )

    @classmethod
    def from_config(
        cls, world: NavigationWorld, prior: ActionPrior, config: SolverConfig
    ) -> "IBRSolver":
        return cls(world, prior, **config.model_dump())

    @property
    def max_iterations(self) -> int:
        return self.config.max_iterations

    @property
    def convergence_tolerance(self) -> float:
        return self.config.convergence_tolerance

    @property
    def samples_per_response(self) -> int:
        return self.config.samples_per_response

    def _candidates(
        self, agent_index: int, iteration: int, gen: SeededGenerator
    ) -> np.ndarray:
        # a key always yields the same batch; it is redrawn, never held
        if self.config.resample_each_iteration:
            stream = gen.spawn(agent_index, iteration)
        else:
            stream = gen.spawn(agent_index)
        return self.prior.sample_batch(stream, self.samples_per_response)

    def solve(
        self,
        joint_state,
        betas: Sequence[float],
        gen: SeededGenerator,
        initial_plans: Optional[np.ndarray] = None,
    ) -> StrategyProfile:
        """
        Compute a bounded-rational equilibrium strategy profile.

        Args:
            joint_state: ``(N, 3)`` current positions
            betas: per-agent rationality levels
            gen: substream for this planning step; agent ``i`` draws from
                ``gen.spawn(i)`` (or ``gen.spawn(i, iteration)`` when
                resampling each sweep)
            initial_plans: ``(N, H, 3)`` starting profile; zero velocities
                when omitted

        Returns:
            The final profile with per-agent KL/ESS and the per-sweep
            convergence history

        Raises:
            DimensionMismatchError: if agent counts disagree
            SolverError: if a best response fails (e.g. non-finite utility)
        """
        state = as_joint_state(joint_state)
        n_agents = state.shape[0]
        if len(betas) != n_agents or self.world.n_agents != n_agents:
            raise DimensionMismatchError(
                f"{n_agents} positions, {len(betas)} betas, "
                f"{self.world.n_agents} goals"
            )

        horizon = self.prior.horizon
        if initial_plans is None:
            plans = np.zeros((n_agents, horizon, 3))
        else:
            plans = np.array(initial_plans, dtype=float)
            if plans.shape != (n_agents, horizon, 3):
                raise DimensionMismatchError(
                    f"initial plans must have shape {(n_agents, horizon, 3)}, "
                    f"got {plans.shape}"
                )

        kl = [0.0] * n_agents
        ess = [float(self.samples_per_response)] * n_agents
        history: List[float] = []
        converged = False
        iteration = 0

        for iteration in range(1, self.max_iterations + 1):
            previous = plans.copy()
            for i in range(n_agents):
                try:
                    samples = best_response_samples(
                        i,
                        state,
                        np.delete(plans, i, axis=0),
                        self.prior,
                        betas[i],
                        self.samples_per_response,
                        gen,
                        self.world,
                        candidates=self._candidates(i, iteration, gen),
                        chunk_size=self.config.chunk_size,
                        workers=self.config.workers,
                    )
                except (NonFiniteUtilityError, DimensionMismatchError) as e:
                    raise SolverError(str(e), agent_index=i, iteration=iteration) from e
                plans[i] = samples.expected_sequence()
                kl[i], ess[i] = samples.kl, samples.ess

            metric = convergence_metric(previous, plans)
            history.append(metric)
            logger.debug("IBR iteration %d: convergence metric %.3g", iteration, metric)
            if metric < self.convergence_tolerance:
                converged = True
                break

        return StrategyProfile(
            plans=plans,
            iteration=iteration,
            converged=converged,
            kl=kl,
            ess=ess,
            convergence_history=history,
        )
