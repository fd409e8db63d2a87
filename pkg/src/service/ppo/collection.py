"""
Dataset collection from trained (or partially trained) policies.

Episodes are played with argmax PPO actions (expert candidates), sampled
PPO actions (non-expert) or uniform random actions, in a seeded shuffled
order. A trajectory is flagged expert when its return clears the
threshold; with no threshold given, the configured percentile of the
collected returns is used.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np
import torch

from src.configs import EXPERT_PERCENTILE, EXPERT_TAIL_EPISODES
from src.models import ActionSpace
from src.service.dt.trajectory import Trajectory
from src.service.envs.base import BaseEnvironment
from src.service.ppo.policy import PPOPolicy
from src.service.rollouts import EpisodePolicy, RandomPolicy, run_episode
from src.utils import derive_seed

logger = logging.getLogger(__name__)


class PPOActionPolicy(EpisodePolicy):
    """EpisodePolicy view of a PPOPolicy; greedy picks the per-part argmax."""

    def __init__(self, policy: PPOPolicy, space: ActionSpace, greedy: bool):
        self.policy = policy
        self.space = space
        self.greedy = greedy
        self._generator = torch.Generator().manual_seed(0)

    def begin(self, env, state, seed):
        self._generator = torch.Generator().manual_seed(derive_seed(seed, "ppo-policy"))

    def act(self, state):
        indices, _, _ = self.policy.act(torch.as_tensor(state, dtype=torch.float64), self._generator, self.greedy)
        return self.space.from_grid_indices(indices.tolist())


def expert_threshold(
    returns: Sequence[float],
    percentile: float = EXPERT_PERCENTILE,
    tail: int = EXPERT_TAIL_EPISODES,
) -> float:
    """Percentile of the last `tail` training returns; -inf when there are none."""
    if len(returns) == 0:
        return float("-inf")
    return float(np.percentile(np.asarray(returns[-tail:], dtype=np.float64), percentile))


def collect_dataset(  # pylint: disable=too-many-arguments
    expert: EpisodePolicy,
    env: BaseEnvironment,
    episodes: int,
    threshold: Optional[float],
    seed: int,
    explorer: Optional[EpisodePolicy] = None,
    explore_fraction: float = 0.0,
    random_fraction: float = 0.0,
    percentile: float = EXPERT_PERCENTILE,
) -> List[Trajectory]:
    """
    Roll out `episodes` episodes and flag each by return.

    Args:
        expert: Policy for the expert share of episodes
        env: Environment of one scenario
        episodes: Number of trajectories to produce
        threshold: Expert cut-off; None means `percentile` of the collected returns
        seed: Episode i is reset with derive_seed(seed, i)
        explorer: Policy for the `explore_fraction` share (sampled actions)
        explore_fraction: Share of episodes played by `explorer`
        random_fraction: Share of episodes played with uniform random actions

    Returns:
        List[Trajectory]: In episode order, expert_flag set
    """
    if explore_fraction + random_fraction > 1.0 + 1e-12:
        raise ValueError("explore_fraction + random_fraction exceeds 1")
    if explore_fraction > 0 and explorer is None:
        raise ValueError("explore_fraction > 0 needs an explorer policy")

    n_random = int(round(episodes * random_fraction))
    n_explore = min(int(round(episodes * explore_fraction)), episodes - n_random)
    modes = ["random"] * n_random + ["explore"] * n_explore + ["expert"] * (episodes - n_random - n_explore)
    order = np.random.default_rng(derive_seed(seed, "collect-order")).permutation(len(modes))
    policies = {"expert": expert, "explore": explorer, "random": RandomPolicy()}

    trajectories = [run_episode(env, policies[modes[j]], derive_seed(seed, i)) for i, j in enumerate(order)]
    if threshold is None:
        threshold = float(np.percentile([t.total_return for t in trajectories], percentile)) if trajectories else 0.0
    for traj in trajectories:
        traj.expert_flag = bool(traj.total_return >= threshold)

    logger.info(
        "Collected %d episodes on %s (%d expert-policy, %d sampled, %d random); %d flagged expert at threshold %.4f",
        episodes,
        env.scenario.scenario_id,
        episodes - n_random - n_explore,
        n_explore,
        n_random,
        sum(t.expert_flag for t in trajectories),
        threshold,
    )
    return trajectories
