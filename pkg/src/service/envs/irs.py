"""
IRS-aided downlink simulator.

Links: direct BS->user h_d, BS->IRS f (N), IRS->user g (N). Each link is
Rician with distance path loss C0 * d^-alpha:

    h = sqrt(C0 d^-alpha) * (sqrt(K/(K+1)) * LoS + sqrt(1/(K+1)) * NLoS)

LoS of f and g is a uniform-linear-array steering vector towards the BS
and the user; the direct LoS term is 1. The scattered parts evolve per
slot as NLoS' = rho * NLoS + sqrt(1 - rho^2) * w with w ~ CN(0, 1).

Rate with power P and phases theta_n:

    log2(1 + P * |h_d + sum_n g_n e^{j theta_n} f_n|^2 / sigma^2)

State features (2N + 3): Re/Im of h_d, previous rate, then Re/Im of
each cascaded coefficient c_n = g_n f_n, amplitudes scaled by 1/sigma.
Keeping c_n last lets scenarios with more elements share the prefix.
"""

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from src.models import ActionSpace, ContinuousPart, DiscretePart, HybridAction
from src.schemas import IRSScenario
from src.service.envs.base import BaseEnvironment

# Upper bound used for the K-factor entry of the prompt.
_PROMPT_K_DB_CAP = 40.0


@dataclass
class ChannelState:
    """Instantaneous channel seen by the BS."""

    direct: complex
    bs_irs: np.ndarray
    irs_user: np.ndarray
    previous_rate: float = 0.0

    @property
    def cascaded(self) -> np.ndarray:
        return self.irs_user * self.bs_irs


def complex_gaussian(rng: np.random.Generator, size=None) -> np.ndarray:
    """CN(0, 1) samples."""
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / math.sqrt(2.0)


def steering_vector(num_elements: int, sin_angle: float, spacing: float) -> np.ndarray:
    """ULA response exp(-j 2 pi spacing n sin(angle)), n = 0..N-1."""
    n = np.arange(num_elements)
    return np.exp(-2j * math.pi * spacing * n * sin_angle)


def _distance(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _sin_angle(origin: Sequence[float], target: Sequence[float]) -> float:
    dist = _distance(origin, target)
    return (target[1] - origin[1]) / dist if dist > 0 else 0.0


def _rician_weights(k_db: float) -> Tuple[float, float]:
    if math.isinf(k_db) and k_db > 0:
        return 1.0, 0.0
    k_lin = 10.0 ** (k_db / 10.0)
    return math.sqrt(k_lin / (k_lin + 1.0)), math.sqrt(1.0 / (k_lin + 1.0))


def _amplitudes(scenario: IRSScenario) -> Tuple[float, float, float]:
    c0 = scenario.reference_gain
    d_direct = _distance(scenario.bs_position, scenario.user_position)
    d_bs_irs = _distance(scenario.bs_position, scenario.irs_position)
    d_irs_user = _distance(scenario.irs_position, scenario.user_position)
    return (
        math.sqrt(c0 * d_direct ** (-scenario.pathloss_direct)),
        math.sqrt(c0 * d_bs_irs ** (-scenario.pathloss_bs_irs)),
        math.sqrt(c0 * d_irs_user ** (-scenario.pathloss_irs_user)),
    )


def _los_components(scenario: IRSScenario) -> Tuple[complex, np.ndarray, np.ndarray]:
    n = scenario.num_elements
    to_bs = steering_vector(n, _sin_angle(scenario.irs_position, scenario.bs_position), scenario.element_spacing)
    to_user = steering_vector(n, _sin_angle(scenario.irs_position, scenario.user_position), scenario.element_spacing)
    return 1.0 + 0.0j, to_bs, to_user


def line_of_sight_channel(scenario: IRSScenario) -> ChannelState:
    """Deterministic channel with every scattered component removed."""
    amp_direct, amp_f, amp_g = _amplitudes(scenario)
    los_direct, los_f, los_g = _los_components(scenario)
    return ChannelState(amp_direct * los_direct, amp_f * los_f, amp_g * los_g)


def phase_angles(indices: Sequence[int], phase_levels: int) -> np.ndarray:
    return 2.0 * math.pi * np.asarray(indices, dtype=np.float64) / phase_levels


def effective_gain(channel: ChannelState, phases: np.ndarray) -> complex:
    """h_d + sum_n g_n e^{j theta_n} f_n for phases in radians."""
    return complex(channel.direct + np.sum(channel.cascaded * np.exp(1j * np.asarray(phases))))


def action_power(action: HybridAction, scenario: IRSScenario) -> float:
    if scenario.continuous_power:
        return float(action.continuous[0])
    return float(scenario.power_levels[action.discrete[0]])


def action_phase_indices(action: HybridAction, scenario: IRSScenario) -> Tuple[int, ...]:
    return tuple(action.discrete) if scenario.continuous_power else tuple(action.discrete[1:])


def compute_rate(channel: ChannelState, action: HybridAction, scenario: IRSScenario) -> float:
    """Achieved rate in bits/s/Hz; 0 when the power is 0."""
    phases = phase_angles(action_phase_indices(action, scenario), scenario.phase_levels)
    gain = abs(effective_gain(channel, phases)) ** 2
    return float(math.log2(1.0 + action_power(action, scenario) * gain / scenario.noise_power))


def best_phase_indices(channel: ChannelState, phase_levels: int) -> np.ndarray:
    """
    Exact maximiser of |h_d + sum_n c_n e^{j theta_n}| over discrete phases.

    At the optimum every element maximises its projection onto the
    direction psi of the total sum, i.e. rounds psi - arg(c_n) to the
    phase grid. That rounding only changes at N * L breakpoints of psi,
    so scanning one psi per breakpoint interval covers every candidate.
    """
    cascaded = channel.cascaded
    step = 2.0 * math.pi / phase_levels
    args = np.angle(cascaded)
    breakpoints = np.sort(np.mod(args[:, None] + (np.arange(phase_levels) + 0.5) * step, 2 * math.pi).ravel())
    upper = np.append(breakpoints[1:], breakpoints[0] + 2 * math.pi)
    psis = 0.5 * (breakpoints + upper)
    indices = np.mod(np.round((psis[:, None] - args[None, :]) / step), phase_levels).astype(np.int64)
    sums = channel.direct + (cascaded[None, :] * np.exp(1j * indices * step)).sum(axis=1)
    return indices[int(np.argmax(np.abs(sums)))]


class IRSEnvironment(BaseEnvironment):
    """Single-user IRS beamforming with discrete phases."""

    scenario: IRSScenario

    def __init__(self, scenario: IRSScenario):
        super().__init__(scenario)
        self._amp_direct, self._amp_f, self._amp_g = _amplitudes(scenario)
        self._los = _los_components(scenario)
        self._los_weight, self._nlos_weight = _rician_weights(scenario.rician_k_db)
        n = scenario.num_elements
        phases = tuple(DiscretePart(f"phase_{i}", scenario.phase_levels) for i in range(n))
        if scenario.continuous_power:
            power = ContinuousPart("power", 0.0, scenario.max_power, tuple(scenario.power_levels))
            self._space = ActionSpace(phases, (power,))
        else:
            self._space = ActionSpace((DiscretePart("power", len(scenario.power_levels)),) + phases)
        self._nlos = (0j, np.zeros(n, dtype=complex), np.zeros(n, dtype=complex))
        self.previous_rate = 0.0

    @property
    def action_space(self) -> ActionSpace:
        return self._space

    @property
    def state_dim(self) -> int:
        return 2 * self.scenario.num_elements + 3

    @property
    def channel(self) -> ChannelState:
        los_d, los_f, los_g = self._los
        nlos_d, nlos_f, nlos_g = self._nlos
        a, b = self._los_weight, self._nlos_weight
        return ChannelState(
            direct=self._amp_direct * (a * los_d + b * nlos_d),
            bs_irs=self._amp_f * (a * los_f + b * nlos_f),
            irs_user=self._amp_g * (a * los_g + b * nlos_g),
            previous_rate=self.previous_rate,
        )

    def _reset(self) -> None:
        n = self.scenario.num_elements
        self._nlos = (
            complex(complex_gaussian(self.rng)),
            complex_gaussian(self.rng, n),
            complex_gaussian(self.rng, n),
        )
        self.previous_rate = 0.0

    def _evolve(self) -> None:
        rho = self.scenario.correlation
        innovation = math.sqrt(1.0 - rho * rho)
        n = self.scenario.num_elements
        d, f, g = self._nlos
        self._nlos = (
            rho * d + innovation * complex(complex_gaussian(self.rng)),
            rho * f + innovation * complex_gaussian(self.rng, n),
            rho * g + innovation * complex_gaussian(self.rng, n),
        )

    def reward_for(self, rate: float) -> float:
        """Rate minus the QoS penalty when the rate misses qos_min_rate."""
        if self.scenario.qos_penalty > 0 and rate < self.scenario.qos_min_rate:
            return rate - self.scenario.qos_penalty
        return rate

    def _step(self, action: HybridAction) -> Tuple[float, dict]:
        channel = self.channel
        rate = compute_rate(channel, action, self.scenario)
        self.previous_rate = rate
        self._evolve()
        return self.reward_for(rate), {"rate": rate, "channel": channel}

    def observe(self) -> np.ndarray:
        channel = self.channel
        scale = 1.0 / math.sqrt(self.scenario.noise_power)
        head = [channel.direct.real * scale, channel.direct.imag * scale, self.previous_rate]
        cascaded = channel.cascaded * scale
        interleaved = np.empty(2 * cascaded.size)
        interleaved[0::2] = cascaded.real
        interleaved[1::2] = cascaded.imag
        return np.concatenate([np.asarray(head), interleaved])

    def make_action(self, power_index: int, phase_indices: Sequence[int]) -> HybridAction:
        """Action from a power-level index and per-element phase indices."""
        phases = tuple(int(i) for i in phase_indices)
        if self.scenario.continuous_power:
            return HybridAction(phases, (float(self.scenario.power_levels[power_index]),))
        return HybridAction((int(power_index),) + phases)

    def optimal_action(self) -> HybridAction:
        """Maximum power with the exact best discrete phases for the current channel."""
        power_index = int(np.argmax(self.scenario.power_levels))
        return self.make_action(power_index, best_phase_indices(self.channel, self.scenario.phase_levels))

    def aligned_action(self) -> HybridAction:
        """Maximum power with each phase rounded to cancel arg(c_n) against arg(h_d)."""
        channel = self.channel
        step = 2.0 * math.pi / self.scenario.phase_levels
        ideal = np.angle(channel.direct) - np.angle(channel.cascaded)
        indices = np.mod(np.round(ideal / step), self.scenario.phase_levels).astype(np.int64)
        return self.make_action(int(np.argmax(self.scenario.power_levels)), indices)

    def heuristic_action(self) -> HybridAction:
        return self.optimal_action()

    def prompt_features(self) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
        s = self.scenario
        constraints = (s.max_power, s.num_elements / 64.0, float(s.phase_levels), s.qos_min_rate)
        environment = (
            s.pathloss_direct,
            s.pathloss_bs_irs,
            s.pathloss_irs_user,
            min(s.rician_k_db, _PROMPT_K_DB_CAP) / 10.0,
            s.correlation,
        )
        return constraints, environment
