"""
UAV-aided mobile-edge-computing simulator.

Per slot: every UAV moves one step (N, S, E, W or hover) and is clipped
to the region; UAVs then serve their selected users in UAV-index order,
each taking min(remaining workload, link capacity) of that user's
workload; finally users move under Gauss-Markov mobility, folded back at
the region edges. Reward is the total workload (Mb) served in the slot.
The episode ends after episode_len slots or once every workload is 0.

State features: per user (x, y, workload) then per UAV (x, y), positions
divided by the region size and workloads by workload_high.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.models import ActionSpace, DiscretePart, HybridAction
from src.schemas import UAVScenario
from src.service.envs.base import BaseEnvironment

# Unit moves for direction indices 0..4: N, S, E, W, hover.
DIRECTIONS = np.asarray([(0.0, 1.0), (0.0, -1.0), (1.0, 0.0), (-1.0, 0.0), (0.0, 0.0)])
HOVER = 4


@dataclass
class UAVState:
    """Full simulator state (positions in m, workloads in Mb)."""

    uav_positions: np.ndarray
    user_positions: np.ndarray
    workloads: np.ndarray
    user_velocities: np.ndarray

    def copy(self) -> "UAVState":
        return UAVState(
            self.uav_positions.copy(),
            self.user_positions.copy(),
            self.workloads.copy(),
            self.user_velocities.copy(),
        )


def uav_link_rate(distance: float, scenario: UAVScenario) -> float:
    """Mb deliverable in one slot over a link of 3-D length `distance` (m)."""
    snr = scenario.reference_snr / distance**scenario.pathloss_exponent
    return scenario.bandwidth_hz * math.log2(1.0 + snr) * scenario.slot_seconds / 1e6


def _fold(positions: np.ndarray, velocities: np.ndarray, size: float) -> Tuple[np.ndarray, np.ndarray]:
    """Reflect positions into [0, size]; velocity components flip on an odd number of bounces."""
    period = 2.0 * size
    wrapped = np.mod(positions, period)
    folded = np.where(wrapped > size, period - wrapped, wrapped)
    bounces = np.floor_divide(positions, size)
    flipped = np.mod(bounces, 2) == 1
    return folded, np.where(flipped, -velocities, velocities)


def mobility_step(
    positions: np.ndarray,
    velocities: np.ndarray,
    scenario: UAVScenario,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    One Gauss-Markov slot for every user.

    v' = eta * v + (1 - eta) * v_mean + sqrt(1 - eta^2) * w,  w ~ N(0, velocity_std^2)
    p' = p + v', reflected at the region boundary.
    """
    eta = scenario.mobility_memory
    mean = np.asarray(scenario.mean_velocity, dtype=np.float64)
    noise = rng.standard_normal(velocities.shape) * scenario.velocity_std
    new_velocities = eta * velocities + (1.0 - eta) * mean + math.sqrt(1.0 - eta * eta) * noise
    return _fold(positions + new_velocities, new_velocities, scenario.region_size)


class UAVEnvironment(BaseEnvironment):
    """Joint path planning and user association for K UAVs."""

    scenario: UAVScenario

    def __init__(self, scenario: UAVScenario):
        super().__init__(scenario)
        parts = []
        for k in range(scenario.num_uavs):
            parts.append(DiscretePart(f"uav{k}_move", len(DIRECTIONS)))
            parts.append(DiscretePart(f"uav{k}_user", scenario.num_users))
        self._space = ActionSpace(tuple(parts))
        self.state: Optional[UAVState] = None

    @property
    def action_space(self) -> ActionSpace:
        return self._space

    @property
    def state_dim(self) -> int:
        return 3 * self.scenario.num_users + 2 * self.scenario.num_uavs

    def spawn_positions(self) -> np.ndarray:
        """UAVs spaced evenly along the horizontal mid-line."""
        k = self.scenario.num_uavs
        size = self.scenario.region_size
        xs = (np.arange(k) + 0.5) / k * size
        return np.stack([xs, np.full(k, size / 2.0)], axis=1)

    def _reset(self) -> None:
        s = self.scenario
        users = self.rng.uniform(0.0, s.region_size, size=(s.num_users, 2))
        workloads = self.rng.uniform(s.workload_low, s.workload_high, size=s.num_users)
        velocities = np.tile(np.asarray(s.mean_velocity, dtype=np.float64), (s.num_users, 1))
        self.state = UAVState(self.spawn_positions(), users, workloads, velocities)

    def load_state(self, state: UAVState, t: int = 0) -> None:
        """Replace the simulator state (log replay, crafted tests)."""
        self.state = state.copy()
        self.t = t
        self.done = self._finished()

    def _finished(self) -> bool:
        return self.t >= self.scenario.episode_len or bool(np.all(self.state.workloads <= 0.0))

    def distance(self, uav: int, user: int) -> float:
        gap = self.state.uav_positions[uav] - self.state.user_positions[user]
        return math.sqrt(float(gap @ gap) + self.scenario.uav_altitude**2)

    def _step(self, action: HybridAction) -> Tuple[float, dict]:
        s = self.scenario
        state = self.state
        moves = np.asarray(action.discrete[0::2])
        users = np.asarray(action.discrete[1::2])
        state.uav_positions = np.clip(state.uav_positions + DIRECTIONS[moves] * s.uav_speed, 0.0, s.region_size)

        served = np.zeros(s.num_users)
        for k, user in enumerate(users):
            capacity = uav_link_rate(self.distance(k, int(user)), s)
            amount = min(state.workloads[user], capacity)
            state.workloads[user] -= amount
            served[user] += amount
        reward = float(served.sum())

        state.user_positions, state.user_velocities = mobility_step(
            state.user_positions, state.user_velocities, s, self.rng
        )
        return reward, {"served": served, "uav_positions": state.uav_positions.copy()}

    def observe(self) -> np.ndarray:
        s = self.scenario
        state = self.state
        users = np.column_stack(
            [state.user_positions / s.region_size, state.workloads / max(s.workload_high, 1e-9)]
        )
        return np.concatenate([users.ravel(), (state.uav_positions / s.region_size).ravel()])

    def _direction_towards(self, uav: int, target: np.ndarray) -> int:
        gap = target - self.state.uav_positions[uav]
        if np.all(np.abs(gap) <= self.scenario.uav_speed / 2.0):
            return HOVER
        if abs(gap[0]) >= abs(gap[1]):
            return 2 if gap[0] > 0 else 3
        return 0 if gap[1] > 0 else 1

    def heuristic_action(self) -> HybridAction:
        """
        Greedy association: in UAV-index order, each UAV takes the unclaimed
        user with the largest remaining workload (nearest on ties) and flies
        towards it.
        """
        state = self.state
        claimed = set()
        parts = []
        for k in range(self.scenario.num_uavs):
            candidates = [u for u in range(self.scenario.num_users) if u not in claimed] or list(
                range(self.scenario.num_users)
            )
            user = max(candidates, key=lambda u: (state.workloads[u], -self.distance(k, u), -u))
            claimed.add(user)
            parts.extend([self._direction_towards(k, state.user_positions[user]), int(user)])
        return HybridAction(tuple(parts))

    def prompt_features(self) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
        s = self.scenario
        constraints = (float(s.num_uavs), s.num_users / 10.0, s.uav_speed / 10.0, s.workload_high / 10.0)
        environment = (
            s.region_size / 100.0,
            s.uav_altitude / 100.0,
            s.pathloss_exponent,
            s.mobility_memory,
            s.velocity_std,
        )
        return constraints, environment
