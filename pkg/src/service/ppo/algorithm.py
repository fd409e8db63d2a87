"""
Proximal Policy Optimization.

`train` alternates rollouts of `rollout_batch` env steps with
`ppo_update`; one learning-curve point (env steps so far, mean and std of
the episode returns finished in that batch) is emitted per rollout, so a
budget of B steps yields B // rollout_batch points. Episodes continue
across batch boundaries; episode i is reset with derive_seed(seed, "episode", i).
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from src import numerics
from src.schemas import PPOConfig
from src.service.envs.base import BaseEnvironment
from src.service.ppo.policy import PPOPolicy
from src.utils import derive_seed

logger = logging.getLogger(__name__)


@dataclass
class CurvePoint:
    env_steps: int
    mean_return: float
    std_return: float


@dataclass
class RolloutBatch:
    """On-policy experience; actions are per-part grid indices."""

    states: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    bootstrap_value: float = 0.0

    @property
    def size(self) -> int:
        return int(self.rewards.shape[0])


@dataclass
class UpdateDiagnostics:
    """Per-epoch statistics of one `ppo_update` call."""

    clip_fractions: List[float] = field(default_factory=list)
    approx_kls: List[float] = field(default_factory=list)
    policy_losses: List[float] = field(default_factory=list)
    value_losses: List[float] = field(default_factory=list)
    entropies: List[float] = field(default_factory=list)
    initial_max_ratio_gap: float = 0.0


@dataclass
class PPOTrainingResult:
    policy: PPOPolicy
    curve: List[CurvePoint]
    episode_returns: List[float]
    env_steps: int


def gae(
    rewards: Sequence[float],
    values: Sequence[float],
    gamma: float,
    lam: float,
    dones: Optional[Sequence[bool]] = None,
    bootstrap_value: float = 0.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Generalized advantage estimates and value targets.

    A_t = delta_t + gamma * lam * A_{t+1},  delta_t = r_t + gamma * V_{t+1} - V_t,
    with V_T = bootstrap_value and both recursions cut after a done step.

    Returns:
        (advantages, returns) with returns = advantages + values
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ValueError(f"rewards {rewards.shape} and values {values.shape} differ")
    dones = np.zeros(rewards.shape, dtype=bool) if dones is None else np.asarray(dones, dtype=bool)
    advantages = np.zeros_like(rewards)
    running = 0.0
    for t in reversed(range(rewards.shape[0])):
        if dones[t]:
            next_value, running = 0.0, 0.0
        else:
            next_value = values[t + 1] if t + 1 < rewards.shape[0] else bootstrap_value
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        advantages[t] = running
    return advantages, advantages + values


def clipped_surrogate(ratio: torch.Tensor, advantages: torch.Tensor, clip: float) -> torch.Tensor:
    """Mean of min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)."""
    return torch.min(ratio * advantages, ratio.clamp(1.0 - clip, 1.0 + clip) * advantages).mean()


def ppo_loss(  # pylint: disable=too-many-arguments
    policy: PPOPolicy,
    states: torch.Tensor,
    actions: torch.Tensor,
    old_log_probs: torch.Tensor,
    advantages: torch.Tensor,
    returns: torch.Tensor,
    config: PPOConfig,
) -> Tuple[torch.Tensor, dict]:
    """
    -surrogate + value_coef * value MSE - entropy_coef * entropy.

    Raises:
        NonFiniteError: the loss is NaN/Inf
    """
    log_prob, entropy, values = policy.evaluate(states, actions)
    ratio = torch.exp(log_prob - old_log_probs)
    surrogate = clipped_surrogate(ratio, advantages, config.clip_epsilon)
    value_loss = ((values - returns) ** 2).mean()
    entropy_mean = entropy.mean()
    loss = -surrogate + config.value_coef * value_loss - config.entropy_coef * entropy_mean
    numerics.ensure_finite(loss.detach(), "PPO loss")
    with torch.no_grad():
        stats = {
            "policy_loss": float(-surrogate),
            "value_loss": float(value_loss),
            "entropy": float(entropy_mean),
            "clip_fraction": float(((ratio - 1.0).abs() > config.clip_epsilon).double().mean()),
            "approx_kl": float((old_log_probs - log_prob).mean()),
            "max_ratio_gap": float((ratio - 1.0).abs().max()),
        }
    return loss, stats


def ppo_update(
    policy: PPOPolicy,
    optimizer: torch.optim.Optimizer,
    batch: RolloutBatch,
    config: PPOConfig,
    generator: torch.Generator,
) -> UpdateDiagnostics:
    """`config.epochs` passes of minibatch SGD on the clipped objective."""
    if batch.size == 0:
        raise ValueError("empty rollout batch")
    advantages, returns = gae(
        batch.rewards, batch.values, config.gamma, config.gae_lambda, batch.dones, batch.bootstrap_value
    )
    advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    states = torch.as_tensor(batch.states)
    actions = torch.as_tensor(batch.actions, dtype=torch.long)
    old_log_probs = torch.as_tensor(batch.log_probs)
    adv_t = torch.as_tensor(advantages)
    ret_t = torch.as_tensor(returns)

    diagnostics = UpdateDiagnostics()
    for epoch in range(config.epochs):
        order = torch.randperm(batch.size, generator=generator)
        epoch_stats: List[dict] = []
        for start in range(0, batch.size, config.minibatch):
            idx = order[start : start + config.minibatch]
            loss, stats = ppo_loss(
                policy, states[idx], actions[idx], old_log_probs[idx], adv_t[idx], ret_t[idx], config
            )
            if epoch == 0 and start == 0:
                diagnostics.initial_max_ratio_gap = stats["max_ratio_gap"]
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(policy.parameters(), config.max_grad_norm)
            optimizer.step()
            epoch_stats.append(stats)
        diagnostics.clip_fractions.append(float(np.mean([s["clip_fraction"] for s in epoch_stats])))
        diagnostics.approx_kls.append(float(np.mean([s["approx_kl"] for s in epoch_stats])))
        diagnostics.policy_losses.append(float(np.mean([s["policy_loss"] for s in epoch_stats])))
        diagnostics.value_losses.append(float(np.mean([s["value_loss"] for s in epoch_stats])))
        diagnostics.entropies.append(float(np.mean([s["entropy"] for s in epoch_stats])))
    return diagnostics


def train(
    env: BaseEnvironment,
    config: PPOConfig,
    budget: int,
    seed: int,
    show_progress: bool = False,
) -> PPOTrainingResult:
    """
    Train a fresh policy on `env` for budget // rollout_batch rollouts.

    Raises:
        ValueError: budget smaller than one rollout batch
    """
    num_batches = budget // config.rollout_batch
    if num_batches < 1:
        raise ValueError(f"budget {budget} is smaller than one rollout batch ({config.rollout_batch})")

    torch.manual_seed(derive_seed(seed, "ppo-init"))
    space = env.action_space
    policy = PPOPolicy(env.state_dim, space.grid_sizes, config.hidden_dim)
    optimizer = torch.optim.Adam(policy.parameters(), lr=config.learning_rate)
    generator = torch.Generator().manual_seed(derive_seed(seed, "ppo-sampling"))

    episode = 0
    state = env.reset(derive_seed(seed, "episode", episode))
    running_return = 0.0
    episode_returns: List[float] = []
    curve: List[CurvePoint] = []
    steps_done = 0

    for batch_index in tqdm(range(num_batches), desc=f"ppo {env.scenario.scenario_id}", disable=not show_progress):
        n = config.rollout_batch
        states = np.zeros((n, env.state_dim))
        actions = np.zeros((n, len(space.grid_sizes)), dtype=np.int64)
        log_probs, values, rewards = np.zeros(n), np.zeros(n), np.zeros(n)
        dones = np.zeros(n, dtype=bool)
        finished: List[float] = []

        for i in range(n):
            indices, log_prob, value = policy.act(torch.as_tensor(state), generator)
            result = env.step(space.from_grid_indices(indices.tolist()))
            states[i], actions[i] = state, indices.numpy()
            log_probs[i], values[i], rewards[i], dones[i] = log_prob, value, result.reward, result.done
            running_return += result.reward
            state = result.state
            if result.done:
                finished.append(running_return)
                episode += 1
                running_return = 0.0
                state = env.reset(derive_seed(seed, "episode", episode))
        steps_done += n

        with torch.no_grad():
            bootstrap = 0.0 if dones[-1] else float(policy.value(torch.as_tensor(state).unsqueeze(0))[0])
        diagnostics = ppo_update(
            policy,
            optimizer,
            RolloutBatch(states, actions, log_probs, values, rewards, dones, bootstrap),
            config,
            generator,
        )

        episode_returns.extend(finished)
        if finished:
            point = CurvePoint(steps_done, float(np.mean(finished)), float(np.std(finished)))
        elif curve:
            point = CurvePoint(steps_done, curve[-1].mean_return, curve[-1].std_return)
        else:
            point = CurvePoint(steps_done, running_return, 0.0)
        curve.append(point)
        logger.info(
            "ppo %s batch %d/%d steps %d mean return %.4f clip %.3f kl %.5f",
            env.scenario.scenario_id,
            batch_index + 1,
            num_batches,
            steps_done,
            point.mean_return,
            diagnostics.clip_fractions[-1],
            diagnostics.approx_kls[-1],
        )

    return PPOTrainingResult(policy, curve, episode_returns, steps_done)
