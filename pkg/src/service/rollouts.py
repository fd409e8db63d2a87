"""
Episode loop shared by every policy kind.

A policy implements `EpisodePolicy`: `begin` is called after each reset
with the episode's seed, `act` maps a state to an action and `record`
receives the action actually taken and its reward. `run_episode` plays
one episode and returns it as a Trajectory; `evaluate` plays many,
optionally across worker threads, each worker holding its own policy and
environment built by the given factories. Episode i always uses seed
derive_seed(seed, i), so results do not depend on the worker count.
"""

import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence

import numpy as np

from src.models import HybridAction
from src.service.dt.trajectory import Trajectory
from src.service.envs.base import BaseEnvironment
from src.utils import derive_seed

logger = logging.getLogger(__name__)


class EpisodePolicy(ABC):
    """Closed-loop controller for one environment at a time."""

    def begin(self, env: BaseEnvironment, state: np.ndarray, seed: int) -> None:  # pylint: disable=unused-argument
        """Called once per episode right after reset."""

    @abstractmethod
    def act(self, state: np.ndarray) -> HybridAction:
        """Action for the current state."""

    def record(self, action: HybridAction, reward: float) -> None:  # pylint: disable=unused-argument
        """Called after every step with the reward received."""


class RandomPolicy(EpisodePolicy):
    """Uniform random legal actions."""

    def __init__(self):
        self._env: Optional[BaseEnvironment] = None
        self._rng = np.random.default_rng(0)

    def begin(self, env, state, seed):
        self._env = env
        self._rng = np.random.default_rng(derive_seed(seed, "random-policy"))

    def act(self, state):
        return self._env.random_action(self._rng)


class HeuristicPolicy(EpisodePolicy):
    """The environment's built-in expert (see `BaseEnvironment.heuristic_action`)."""

    def __init__(self):
        self._env: Optional[BaseEnvironment] = None

    def begin(self, env, state, seed):
        self._env = env

    def act(self, state):
        return self._env.heuristic_action()


class NoisyPolicy(EpisodePolicy):
    """Wraps a policy and replaces its action by a random one with probability epsilon."""

    def __init__(self, inner: EpisodePolicy, epsilon: float):
        self.inner = inner
        self.epsilon = epsilon
        self._env: Optional[BaseEnvironment] = None
        self._rng = np.random.default_rng(0)

    def begin(self, env, state, seed):
        self._env = env
        self._rng = np.random.default_rng(derive_seed(seed, "noisy-policy"))
        self.inner.begin(env, state, seed)

    def act(self, state):
        action = self.inner.act(state)
        if self._rng.random() < self.epsilon:
            return self._env.random_action(self._rng)
        return action

    def record(self, action, reward):
        self.inner.record(action, reward)


def run_episode(env: BaseEnvironment, policy: EpisodePolicy, seed: int) -> Trajectory:
    """Play one episode from `env.reset(seed)` to done."""
    state = env.reset(seed)
    policy.begin(env, state, seed)
    states: List[np.ndarray] = []
    actions: List[np.ndarray] = []
    rewards: List[float] = []
    done = False
    while not done:
        action = policy.act(state)
        result = env.step(action)
        states.append(state)
        actions.append(env.action_space.flatten(action))
        rewards.append(result.reward)
        policy.record(action, result.reward)
        state, done = result.state, result.done
    return Trajectory(env.scenario.scenario_id, np.stack(states), np.stack(actions), np.asarray(rewards))


def evaluate(
    policy_factory: Callable[[], EpisodePolicy],
    env_factory: Callable[[], BaseEnvironment],
    episodes: int,
    seed: int,
    workers: int = 1,
) -> np.ndarray:
    """
    Returns of `episodes` episodes, index-ordered.

    With workers > 1 episodes are split into contiguous chunks, one per
    thread; every thread builds its own policy and environment.
    """
    returns = np.zeros(episodes)

    def play(indices: Sequence[int]) -> None:
        policy, env = policy_factory(), env_factory()
        for i in indices:
            returns[i] = run_episode(env, policy, derive_seed(seed, i)).total_return

    workers = max(1, min(workers, episodes))
    if workers == 1:
        play(range(episodes))
    else:
        chunks = np.array_split(np.arange(episodes), workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for future in [pool.submit(play, chunk.tolist()) for chunk in chunks]:
                future.result()
    logger.debug("Evaluated %d episodes: mean %.4f", episodes, float(returns.mean()) if episodes else 0.0)
    return returns
