"""
Trajectories and returns-to-go.

A trajectory stores one episode as aligned arrays (states T x S, flat
action rows T x A, rewards T). Returns-to-go are never stored; they are
recomputed from rewards so R[t] = r[t] + R[t + 1] holds exactly.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.numerics import NonFiniteError


def compute_returns_to_go(rewards: Sequence[float]) -> np.ndarray:
    """
    Suffix sums R[t] = sum(rewards[t:]), accumulated from the last step back.

    Raises:
        ValueError: empty or non 1-D input
        NonFiniteError: a reward is NaN/Inf
    """
    arr = np.asarray(rewards, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"rewards must be a non-empty 1-D sequence, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("rewards contain non-finite values")
    return np.cumsum(arr[::-1])[::-1].copy()


@dataclass
class Trajectory:
    """
    One episode of one scenario.

    Attributes:
        scenario_id: Scenario the episode was played in
        states: (T, S) state features
        actions: (T, A) flat action rows (see `ActionSpace.flatten`)
        rewards: (T,) rewards in task units
        expert_flag: Return cleared the expert threshold
    """

    scenario_id: str
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    expert_flag: bool = False

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if self.states.ndim != 2 or self.actions.ndim != 2 or self.rewards.ndim != 1:
            raise ValueError(
                f"expected states (T,S), actions (T,A), rewards (T,); got "
                f"{self.states.shape}, {self.actions.shape}, {self.rewards.shape}"
            )
        length = self.rewards.shape[0]
        if length < 1:
            raise ValueError("trajectory must hold at least one step")
        if self.states.shape[0] != length or self.actions.shape[0] != length:
            raise ValueError(
                f"length mismatch: {self.states.shape[0]} states, {self.actions.shape[0]} actions, {length} rewards"
            )

    @property
    def length(self) -> int:
        return int(self.rewards.shape[0])

    @property
    def state_dim(self) -> int:
        return int(self.states.shape[1])

    @property
    def returns_to_go(self) -> np.ndarray:
        return compute_returns_to_go(self.rewards)

    @property
    def total_return(self) -> float:
        return float(self.returns_to_go[0])
