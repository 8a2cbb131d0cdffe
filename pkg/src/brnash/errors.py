"""Exceptions raised by brnash."""

from typing import Optional


class BRNashError(Exception):
    """Base class for all brnash errors"""


class DimensionMismatchError(BRNashError, ValueError):
    """State, action, or plan arrays disagree on agent count or horizon"""


class ActionBoundsError(BRNashError, ValueError):
    """An action's speed lies outside [a_min, a_max]"""


class NonFiniteUtilityError(BRNashError, ValueError):
    """A utility (or weight) is NaN or infinite"""


class ScenarioError(BRNashError, ValueError):
    """A scenario file or config failed to parse or validate"""

    def __init__(
        self, message: str, key: Optional[str] = None, line: Optional[int] = None
    ):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class SolverError(BRNashError, RuntimeError):
    """Iterated best response failed for a specific agent and iteration"""

    def __init__(self, message: str, agent_index: int, iteration: int):
        self.agent_index = agent_index
        self.iteration = iteration
        super().__init__(
            f"agent {agent_index}, IBR iteration {iteration}: {message}"
        )


class EpisodeError(BRNashError, RuntimeError):
    """An episode aborted at a given timestep"""

    def __init__(self, message: str, timestep: int):
        self.timestep = timestep
        super().__init__(f"timestep {timestep}: {message}")
