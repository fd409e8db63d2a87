"""
Gym-style environment contract.

`reset(seed)` starts a fresh episode and returns the first state vector;
`step(action)` advances one slot and returns a StepResult. Stepping a
finished episode raises EpisodeDoneError. Environments are
single-threaded; parallel episodes use separate instances.
"""

from abc import ABC, abstractmethod
from typing import Tuple, Union

import numpy as np

from src.models import ActionSpace, HybridAction, Prompt, StepResult
from src.schemas import IRSScenario, UAVScenario


class EpisodeDoneError(RuntimeError):
    """step() called after the episode ended."""


class BaseEnvironment(ABC):
    """Shared bookkeeping for the slot clock and done flag."""

    def __init__(self, scenario: Union[IRSScenario, UAVScenario]):
        self.scenario = scenario
        self.t = 0
        self.done = True
        self.rng = np.random.default_rng(0)

    @property
    @abstractmethod
    def action_space(self) -> ActionSpace:
        """Legal actions."""

    @property
    @abstractmethod
    def state_dim(self) -> int:
        """Width of the state vector."""

    @abstractmethod
    def _reset(self) -> None:
        """Draw the initial episode state from `self.rng`."""

    @abstractmethod
    def _step(self, action: HybridAction) -> Tuple[float, dict]:
        """Apply one slot; return (reward, info)."""

    @abstractmethod
    def observe(self) -> np.ndarray:
        """Current state features."""

    @abstractmethod
    def heuristic_action(self) -> HybridAction:
        """Near-optimal action for the current state."""

    @abstractmethod
    def prompt_features(self) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
        """(constraints, environment configuration) entries of the prompt."""

    def _finished(self) -> bool:
        return self.t >= self.scenario.episode_len

    def reset(self, seed: int) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.done = False
        self._reset()
        return self.observe()

    def step(self, action: HybridAction) -> StepResult:
        if self.done:
            raise EpisodeDoneError(f"episode of {self.scenario.scenario_id} already finished at t={self.t}")
        self.action_space.validate(action)
        reward, info = self._step(action)
        self.t += 1
        self.done = self._finished()
        return StepResult(self.observe(), float(reward), self.done, info)

    def random_action(self, rng: np.random.Generator) -> HybridAction:
        space = self.action_space
        discrete = tuple(int(rng.integers(p.cardinality)) for p in space.discrete)
        continuous = tuple(float(rng.uniform(p.low, p.high)) for p in space.continuous)
        return HybridAction(discrete, continuous)

    def build_prompt(self, desired_return: float) -> Prompt:
        constraints, environment = self.prompt_features()
        return Prompt(float(desired_return), constraints, environment)


def make_env(scenario: Union[IRSScenario, UAVScenario]) -> BaseEnvironment:
    """Environment instance for a scenario spec."""
    # pylint: disable=import-outside-toplevel
    from src.service.envs.irs import IRSEnvironment
    from src.service.envs.uav import UAVEnvironment

    if isinstance(scenario, IRSScenario):
        return IRSEnvironment(scenario)
    if isinstance(scenario, UAVScenario):
        return UAVEnvironment(scenario)
    raise TypeError(f"unsupported scenario type {type(scenario).__name__}")


def build_prompt(scenario: Union[IRSScenario, UAVScenario], desired_return: float) -> Prompt:
    return make_env(scenario).build_prompt(desired_return)
