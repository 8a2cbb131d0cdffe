"""
Default (prior) policy and seeded random streams.

Velocities are drawn as a uniform speed in [a_min, a_max] times a direction
uniform on the unit sphere, i.i.d. per step. Each action consumes exactly
three uniform doubles from the stream, so a batch of K sequences is the same
draw-for-draw as K successive single-sequence calls on that stream.
"""

from typing import Protocol, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .models import DEFAULT_A_MAX, DEFAULT_A_MIN, DEFAULT_HORIZON, PriorConfig


class SeededGenerator(BaseModel):
    """
    Value-like handle on a counter-based random substream.

    A given (seed, stream_id) always yields the same sequence of draws. Child
    substreams are addressed by appending integer keys, e.g. run index,
    timestep, agent index.

    Examples:
        >>> gen = SeededGenerator(seed=7).spawn(0, 12)
        >>> rng = gen.stream()
        >>> rng.random() == gen.stream().random()
        True
    """

    seed: int = Field(ge=0, lt=2**64, description="Root seed")
    stream_id: Tuple[int, ...] = Field(
        default=(), description="Substream key path below the root seed"
    )

    model_config = ConfigDict(frozen=True)

    def spawn(self, *keys: int) -> "SeededGenerator":
        """Child substream addressed by ``keys`` under this one"""
        return SeededGenerator(seed=self.seed, stream_id=self.stream_id + tuple(keys))

    def stream(self) -> np.random.Generator:
        """A fresh numpy Generator positioned at the start of this substream"""
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.stream_id)
        return np.random.Generator(np.random.Philox(sequence))


RandomSource = Union[np.random.Generator, SeededGenerator]


def _as_rng(gen: RandomSource) -> np.random.Generator:
    return gen.stream() if isinstance(gen, SeededGenerator) else gen


class ActionPrior(Protocol):
    """Anything the sampler can draw proposal sequences from"""

    @property
    def horizon(self) -> int: ...

    def sample_batch(self, gen: RandomSource, count: int) -> np.ndarray: ...


class UniformPrior(BaseModel):
    """Uniform speed, uniform direction default policy over H-step sequences"""

    a_min: float = Field(default=DEFAULT_A_MIN, ge=0, allow_inf_nan=False)
    a_max: float = Field(default=DEFAULT_A_MAX, ge=0, allow_inf_nan=False)
    horizon: int = Field(default=DEFAULT_HORIZON, ge=0)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _ordered_bounds(self) -> "UniformPrior":
        if self.a_min > self.a_max:
            raise ValueError(f"a_min ({self.a_min}) exceeds a_max ({self.a_max})")
        return self

    @classmethod
    def from_config(cls, config: PriorConfig) -> "UniformPrior":
        return cls(a_min=config.a_min, a_max=config.a_max, horizon=config.horizon)

    def _velocities(self, draws: np.ndarray) -> np.ndarray:
        speed = self.a_min + (self.a_max - self.a_min) * draws[..., 0]
        z = 2.0 * draws[..., 1] - 1.0
        phi = 2.0 * np.pi * draws[..., 2]
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        direction = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
        return speed[..., None] * direction

    def sample_action(self, gen: RandomSource) -> np.ndarray:
        """One velocity, shape (3,)"""
        return self._velocities(_as_rng(gen).random(3))

    def sample_sequence(self, gen: RandomSource) -> np.ndarray:
        """H i.i.d. velocities, shape (H, 3)"""
        return self._velocities(_as_rng(gen).random((self.horizon, 3)))

    def sample_batch(self, gen: RandomSource, count: int) -> np.ndarray:
        """
        K sequences, shape (K, H, 3).

        Raises:
            ValueError: if ``count`` < 1
        """
        if count < 1:
            raise ValueError(f"sample count must be >= 1, got {count}")
        return self._velocities(_as_rng(gen).random((count, self.horizon, 3)))

    def log_density(self, sequence: np.ndarray) -> float:
        """
        Log-density of a sequence in (speed, direction) coordinates; -inf
        outside the support. Constant on the support.
        """
        width = self.a_max - self.a_min
        if width <= 0:
            raise ValueError("log density undefined for a degenerate speed range")
        sequence = np.asarray(sequence, dtype=float).reshape(-1, 3)
        speeds = np.sqrt(np.sum(sequence * sequence, axis=-1))
        if np.any((speeds < self.a_min) | (speeds > self.a_max)):
            return float("-inf")
        return -sequence.shape[0] * float(np.log(width) + np.log(4.0 * np.pi))
