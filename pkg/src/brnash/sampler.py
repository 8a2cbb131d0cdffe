"""
Bounded-rational best responses by self-normalized importance sampling.

An agent's bounded-optimal policy tilts its prior by exp(beta * utility).
Sampling K sequences from the prior and weighting them by the normalized
softmax of beta * utility gives a consistent estimate of the posterior mean
sequence, which is returned as the best response.

All weight arithmetic happens in log space.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import logsumexp, xlogy

from .errors import DimensionMismatchError, NonFiniteUtilityError
from .prior_policy import ActionPrior, RandomSource
from .world_model import NavigationWorld, as_joint_state, others_trajectory, utility_batch

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 8_192
LOW_ESS_FRACTION = 0.01


class WeightedSamples(BaseModel):
    """
    Prior samples with their utilities and normalized softmax weights.

    On a finite sample set this is the bounded-optimal posterior over one
    agent's action sequences: weights are proportional to exp(beta * U).
    """

    sequences: np.ndarray = Field(description="(K, H, 3) sampled velocities")
    utilities: np.ndarray = Field(description="(K,) utility of each sample")
    log_weights: np.ndarray = Field(description="(K,) normalized log-weights")
    weights: np.ndarray = Field(description="(K,) normalized weights")
    beta: float = Field(ge=0, description="Rationality level used for the weights")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def count(self) -> int:
        return int(self.weights.shape[0])

    @property
    def kl(self) -> float:
        return kl_from_prior(self.weights)

    @property
    def ess(self) -> float:
        return effective_sample_size(self.weights)

    def expected_sequence(self) -> np.ndarray:
        """Weighted mean action sequence, shape (H, 3)"""
        # elementwise product then a plain reduction: summation order is fixed
        return (self.weights[:, None, None] * self.sequences).sum(axis=0)


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not np.isfinite(beta) or beta < 0:
        raise ValueError(f"beta must be finite and non-negative, got {beta}")
    return beta


def _check_utilities(utilities) -> np.ndarray:
    values = np.asarray(utilities, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ValueError(
            f"utilities must be a non-empty 1-D array, got shape {values.shape}"
        )
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise NonFiniteUtilityError(
            f"utility of sample {bad} is {values[bad]}; weights are undefined"
        )
    return values


def log_weights(utilities, beta: float) -> np.ndarray:
    """Normalized log-weights beta*U - logsumexp(beta*U)"""
    values = _check_utilities(utilities)
    scaled = _check_beta(beta) * values
    if not np.all(np.isfinite(scaled)):
        raise NonFiniteUtilityError("beta * utility overflows")
    return scaled - logsumexp(scaled)


def compute_weights(utilities, beta: float) -> np.ndarray:
    """
    Softmax weights of ``utilities`` at rationality ``beta``.

    Args:
        utilities: K finite utilities, K >= 1
        beta: rationality level >= 0; 0 gives uniform weights

    Returns:
        K non-negative weights summing to 1

    Raises:
        NonFiniteUtilityError: if any utility is NaN or infinite
        ValueError: if ``utilities`` is empty

    Examples:
        >>> compute_weights([0.0, np.log(2.0)], beta=1.0)
        array([0.33333333, 0.66666667])
    """
    return np.exp(log_weights(utilities, beta))


def kl_from_prior(weights) -> float:
    """
    KL divergence (nats) of the weighted sample set from the uniform one:
    log K + sum w log w, with 0 log 0 = 0. Ranges over [0, log K].
    """
    w = np.asarray(weights, dtype=float)
    return max(0.0, float(np.log(w.size) + np.sum(xlogy(w, w))))


def effective_sample_size(weights) -> float:
    """1 / sum(w^2); between 1 and K for normalized weights"""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def weighted_samples(sequences, utilities, beta: float) -> WeightedSamples:
    """Weight a fixed set of sequences ``(K, H, 3)`` by their utilities"""
    sequences = np.asarray(sequences, dtype=float)
    values = _check_utilities(utilities)
    if sequences.shape[0] != values.shape[0]:
        raise DimensionMismatchError(
            f"{sequences.shape[0]} sequences but {values.shape[0]} utilities"
        )
    logw = log_weights(values, beta)
    return WeightedSamples(
        sequences=sequences,
        utilities=values,
        log_weights=logw,
        weights=np.exp(logw),
        beta=beta,
    )


def evaluate_utilities(
    agent_index: int,
    joint_state,
    candidates: np.ndarray,
    others: Optional[np.ndarray],
    world: NavigationWorld,
    *,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> np.ndarray:
    """
    Utilities of every candidate, evaluated in fixed-size chunks.

    Each utility depends only on its own candidate, so the result is the same
    for any chunk size or worker count.
    """
    bounds = range(0, candidates.shape[0], chunk_size)

    def _chunk(start: int) -> np.ndarray:
        return utility_batch(
            agent_index, joint_state, candidates[start : start + chunk_size], others, world  # noqa: E501
        )

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk, bounds))
    else:
        parts = [_chunk(start) for start in bounds]
    return np.concatenate(parts)


def best_response_samples(
    agent_index: int,
    joint_state,
    others_plans,
    prior: ActionPrior,
    beta: float,
    count: int,
    gen: RandomSource,
    world: NavigationWorld,
    *,
    candidates: Optional[np.ndarray] = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> WeightedSamples:
    """
    Draw ``count`` sequences from ``prior``, score them against the fixed
    plans of the other agents and weight them.

    Args:
        agent_index: the responding agent
        joint_state: ``(N, 3)`` current positions
        others_plans: ``(N-1, H, 3)`` plans of every other agent, index order
        prior: proposal distribution (the agent's default policy)
        beta: the agent's rationality level
        count: number of samples K >= 1
        gen: random substream for this best response
        world: goals, obstacles, reward weights and dt
        candidates: pre-drawn ``(K, H, 3)`` proposals to reuse instead of
            drawing from ``gen``

    Returns:
        The weighted sample set; its ``expected_sequence()`` is the response
    """
    state = as_joint_state(joint_state)
    others = others_trajectory(agent_index, state, others_plans, world.dt)
    if others is not None and others.shape[0] != prior.horizon:
        raise DimensionMismatchError(
            f"others' plans have horizon {others.shape[0]}, prior has {prior.horizon}"
        )

    if candidates is None:
        candidates = prior.sample_batch(gen, count)
    elif candidates.shape[0] != count:
        raise DimensionMismatchError(
            f"expected {count} candidates, got {candidates.shape[0]}"
        )
    utilities = evaluate_utilities(
        agent_index, state, candidates, others, world,
        chunk_size=chunk_size, workers=workers,
    )
    samples = weighted_samples(candidates, utilities, beta)

    if count >= 100 and samples.ess < LOW_ESS_FRACTION * count:
        logger.warning(
            "Agent %d: effective sample size %.1f is below %.0f%% of K=%d",
            agent_index,
            samples.ess,
            100 * LOW_ESS_FRACTION,
            count,
        )
    logger.debug(
        "Agent %d best response: K=%d beta=%g ESS=%.1f KL=%.4f",
        agent_index,
        count,
        beta,
        samples.ess,
        samples.kl,
    )
    return samples


def best_response(
    agent_index: int,
    joint_state,
    others_plans,
    prior: ActionPrior,
    beta: float,
    count: int,
    gen: RandomSource,
    world: NavigationWorld,
    *,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> np.ndarray:
    """Expected bounded-optimal action sequence ``(H, 3)`` for ``agent_index``"""
    return best_response_samples(
        agent_index,
        joint_state,
        others_plans,
        prior,
        beta,
        count,
        gen,
        world,
        chunk_size=chunk_size,
        workers=workers,
    ).expected_sequence()
