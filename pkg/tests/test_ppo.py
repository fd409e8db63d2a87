"""
Tests for the PPO baseline: advantage estimation, the clipped objective,
training curves and dataset collection.
"""

# pylint: disable=missing-function-docstring,redefined-outer-name,unused-argument

import numpy as np
import pytest
import torch

from src.schemas import PPOConfig
from src.service.envs.irs import IRSEnvironment
from src.service.ppo.algorithm import RolloutBatch, clipped_surrogate, gae, ppo_loss, ppo_update, train
from src.service.ppo.collection import PPOActionPolicy, collect_dataset, expert_threshold
from src.service.ppo.policy import PPOPolicy
from src.service.rollouts import HeuristicPolicy

TINY_PPO = PPOConfig(rollout_batch=20, minibatch=10, epochs=1, hidden_dim=8)


@pytest.fixture()
def irs_env(irs_scenario) -> IRSEnvironment:
    return IRSEnvironment(irs_scenario)


def _deltas(rewards, values, gamma, bootstrap):
    next_values = np.append(values[1:], bootstrap)
    return rewards + gamma * next_values - values


# ---------------------------------------------------------------------------
# GAE
# ---------------------------------------------------------------------------


def test_gae_with_zero_lambda_is_the_td_error():
    rewards, values = np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.1, 0.2])
    advantages, returns = gae(rewards, values, gamma=0.9, lam=0.0, bootstrap_value=0.4)
    np.testing.assert_allclose(advantages, _deltas(rewards, values, 0.9, 0.4), rtol=0, atol=1e-12)
    np.testing.assert_allclose(returns, advantages + values, rtol=0, atol=1e-12)


def test_gae_with_zero_gamma_is_reward_minus_value():
    rewards, values = np.array([1.0, -2.0, 0.5]), np.array([0.25, 0.5, 1.0])
    advantages, _ = gae(rewards, values, gamma=0.0, lam=0.95, bootstrap_value=7.0)
    assert advantages.tolist() == (rewards - values).tolist()


def test_gae_matches_the_discounted_sum_of_td_errors():
    rng = np.random.default_rng(0)
    rewards, values = rng.standard_normal(12), rng.standard_normal(12)
    gamma, lam, bootstrap = 0.97, 0.9, 0.3
    deltas = _deltas(rewards, values, gamma, bootstrap)
    expected = [sum((gamma * lam) ** (k - t) * deltas[k] for k in range(t, 12)) for t in range(12)]
    advantages, _ = gae(rewards, values, gamma, lam, bootstrap_value=bootstrap)
    np.testing.assert_allclose(advantages, expected, rtol=0, atol=1e-10)


def test_gae_cuts_at_episode_ends():
    rewards, values = np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.25, 0.75])
    advantages, _ = gae(rewards, values, 0.9, 0.8, dones=[False, True, False], bootstrap_value=1.0)
    assert advantages[1] == pytest.approx(2.0 - 0.25)
    assert advantages[2] == pytest.approx(3.0 + 0.9 * 1.0 - 0.75)
    assert advantages[0] == pytest.approx(1.0 + 0.9 * 0.25 - 0.5 + 0.9 * 0.8 * advantages[1])


def test_gae_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        gae([1.0, 2.0], [0.0], 0.9, 0.9)


# ---------------------------------------------------------------------------
# Clipped objective
# ---------------------------------------------------------------------------


def test_clipped_surrogate_takes_the_pessimistic_branch():
    ratio = torch.tensor([1.5, 1.5, 0.5, 0.5])
    advantages = torch.tensor([1.0, -1.0, 1.0, -1.0])
    # min(1.5, 1.2), min(-1.5, -1.2), min(0.5, 0.8), min(-0.5, -0.8)
    assert clipped_surrogate(ratio, advantages, 0.2).item() == pytest.approx(-0.15, abs=1e-12)


def test_unit_ratio_gives_mean_advantage():
    advantages = torch.tensor([0.3, -1.2, 2.0])
    assert clipped_surrogate(torch.ones(3), advantages, 0.2).item() == pytest.approx(advantages.mean().item())


def test_zero_advantages_leave_only_the_entropy_gradient():
    torch.manual_seed(0)
    policy = PPOPolicy(state_dim=3, grid_sizes=[3, 2], hidden_dim=8)
    states = torch.randn(6, 3, generator=torch.Generator().manual_seed(1))
    actions = torch.tensor([[0, 1], [2, 0], [1, 1], [0, 0], [2, 1], [1, 0]])
    with torch.no_grad():
        old_log_probs, _, _ = policy.evaluate(states, actions)
    config = PPOConfig(entropy_coef=0.5, value_coef=0.0, rollout_batch=6, minibatch=6)

    loss, _ = ppo_loss(policy, states, actions, old_log_probs, torch.zeros(6), torch.zeros(6), config)
    grad_ppo = torch.autograd.grad(loss, policy.actor_head.weight)[0]
    _, entropy, _ = policy.evaluate(states, actions)
    grad_entropy = torch.autograd.grad(-0.5 * entropy.mean(), policy.actor_head.weight)[0]
    torch.testing.assert_close(grad_ppo, grad_entropy, rtol=0, atol=1e-12)


def test_first_epoch_starts_from_unit_ratios():
    torch.manual_seed(0)
    policy = PPOPolicy(state_dim=4, grid_sizes=[3, 4], hidden_dim=8)
    generator = torch.Generator().manual_seed(2)
    states = torch.randn(16, 4, generator=generator)
    rows = [policy.act(s, generator) for s in states]
    batch = RolloutBatch(
        states=states.numpy(),
        actions=np.stack([r[0].numpy() for r in rows]),
        log_probs=np.asarray([r[1] for r in rows]),
        values=np.asarray([r[2] for r in rows]),
        rewards=np.linspace(-1.0, 1.0, 16),
        dones=np.zeros(16, dtype=bool),
    )
    config = PPOConfig(rollout_batch=16, minibatch=16, epochs=1)
    optimizer = torch.optim.Adam(policy.parameters(), lr=1e-3)
    diagnostics = ppo_update(policy, optimizer, batch, config, generator)
    assert diagnostics.initial_max_ratio_gap < 1e-9
    assert diagnostics.clip_fractions == [0.0]


def test_policy_distributions_are_valid():
    torch.manual_seed(0)
    policy = PPOPolicy(state_dim=5, grid_sizes=[3, 4, 2], hidden_dim=8)
    states = torch.randn(10, 5) * 50.0
    for logits in policy.logits(states):
        probs = torch.softmax(logits, dim=-1)
        assert torch.all(probs >= 0)
        torch.testing.assert_close(probs.sum(dim=-1), torch.ones(10), rtol=0, atol=1e-12)
    indices, log_prob, _ = policy.act(states[0], torch.Generator().manual_seed(0))
    assert [int(i) < n for i, n in zip(indices, [3, 4, 2])] == [True] * 3
    assert log_prob <= 0.0


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def test_training_emits_one_point_per_rollout(irs_env):
    result = train(irs_env, TINY_PPO, budget=65, seed=0)
    assert [p.env_steps for p in result.curve] == [20, 40, 60]
    assert result.env_steps == 60
    # 10-slot episodes: 6 finish within 60 steps
    assert len(result.episode_returns) == 6
    assert all(np.isfinite(p.mean_return) for p in result.curve)


def test_training_is_deterministic(irs_scenario):
    first = train(IRSEnvironment(irs_scenario), TINY_PPO, budget=40, seed=3)
    second = train(IRSEnvironment(irs_scenario), TINY_PPO, budget=40, seed=3)
    assert first.curve == second.curve
    assert first.episode_returns == second.episode_returns


def test_budget_below_one_rollout_is_rejected(irs_env):
    with pytest.raises(ValueError):
        train(irs_env, TINY_PPO, budget=19, seed=0)


# ---------------------------------------------------------------------------
# Collection
# ---------------------------------------------------------------------------


def test_expert_threshold():
    assert expert_threshold([]) == float("-inf")
    assert expert_threshold([1.0, 2.0, 3.0, 4.0], percentile=50, tail=2) == 3.5
    assert expert_threshold([5.0, 1.0, 3.0], percentile=100, tail=10) == 5.0


def test_minus_infinity_threshold_flags_every_trajectory(irs_env):
    trajectories = collect_dataset(HeuristicPolicy(), irs_env, 6, float("-inf"), seed=0, random_fraction=0.5)
    assert len(trajectories) == 6
    assert all(t.expert_flag for t in trajectories)
    for t in trajectories:
        rtg = t.returns_to_go
        np.testing.assert_allclose(rtg[:-1], t.rewards[:-1] + rtg[1:], rtol=0, atol=1e-12)


def test_percentile_threshold_separates_expert_from_random(irs_env):
    trajectories = collect_dataset(HeuristicPolicy(), irs_env, 10, None, seed=1, random_fraction=0.5, percentile=50)
    experts = [t.total_return for t in trajectories if t.expert_flag]
    others = [t.total_return for t in trajectories if not t.expert_flag]
    assert experts and others
    assert np.mean(experts) >= np.mean(others)


def test_collection_is_seeded(irs_scenario):
    def run():
        env = IRSEnvironment(irs_scenario)
        episodes = collect_dataset(HeuristicPolicy(), env, 4, None, seed=2, random_fraction=0.5)
        return [t.total_return for t in episodes]

    assert run() == run()


def test_explore_share_needs_an_explorer(irs_env):
    with pytest.raises(ValueError):
        collect_dataset(HeuristicPolicy(), irs_env, 4, None, seed=0, explore_fraction=0.5)
    with pytest.raises(ValueError):
        collect_dataset(HeuristicPolicy(), irs_env, 4, None, seed=0, explore_fraction=0.6, random_fraction=0.6)


def test_trained_policy_collects_legal_episodes(irs_env):
    result = train(irs_env, TINY_PPO, budget=20, seed=0)
    greedy = PPOActionPolicy(result.policy, irs_env.action_space, greedy=True)
    sampled = PPOActionPolicy(result.policy, irs_env.action_space, greedy=False)
    trajectories = collect_dataset(greedy, irs_env, 4, None, seed=0, explorer=sampled, explore_fraction=0.5)
    assert len(trajectories) == 4
    assert all(t.length == irs_env.scenario.episode_len for t in trajectories)
