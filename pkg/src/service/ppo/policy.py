"""
Factorized categorical actor-critic.

The actor maps a state to one categorical distribution per action part
(continuous parts are offered on their native grid); the critic maps a
state to a scalar value. Both are two-hidden-layer tanh perceptrons.
"""

from typing import List, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn


def _mlp(in_dim: int, hidden: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(in_dim, hidden), nn.Tanh(), nn.Linear(hidden, hidden), nn.Tanh())


class PPOPolicy(nn.Module):
    def __init__(self, state_dim: int, grid_sizes: Sequence[int], hidden_dim: int = 64):
        super().__init__()
        self.grid_sizes = list(grid_sizes)
        self.actor_body = _mlp(state_dim, hidden_dim)
        self.actor_head = nn.Linear(hidden_dim, sum(self.grid_sizes))
        self.critic = nn.Sequential(_mlp(state_dim, hidden_dim), nn.Linear(hidden_dim, 1))
        with torch.no_grad():
            self.actor_head.weight.mul_(0.01)
            self.actor_head.bias.zero_()

    def logits(self, states: torch.Tensor) -> List[torch.Tensor]:
        """Per part, (N, C_i) logits."""
        return list(torch.split(self.actor_head(self.actor_body(states)), self.grid_sizes, dim=-1))

    def value(self, states: torch.Tensor) -> torch.Tensor:
        return self.critic(states).squeeze(-1)

    def evaluate(
        self, states: torch.Tensor, actions: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """
        Joint log-probability and entropy of `actions` (N, P) plus values.

        Returns:
            (log_prob (N,), entropy (N,), value (N,))
        """
        log_prob = states.new_zeros(states.shape[0])
        entropy = states.new_zeros(states.shape[0])
        for i, part_logits in enumerate(self.logits(states)):
            log_probs = F.log_softmax(part_logits, dim=-1)
            log_prob = log_prob + log_probs.gather(-1, actions[:, i : i + 1]).squeeze(-1)
            entropy = entropy - (log_probs.exp() * log_probs).sum(dim=-1)
        return log_prob, entropy, self.value(states)

    @torch.no_grad()
    def act(
        self, state: torch.Tensor, generator: torch.Generator, greedy: bool = False
    ) -> Tuple[torch.Tensor, float, float]:
        """
        Sample (or argmax) one action for a single (S,) state.

        Returns:
            (indices (P,) long, log_prob, value)
        """
        states = state.unsqueeze(0)
        chosen = []
        for part_logits in self.logits(states):
            probs = F.softmax(part_logits[0], dim=-1)
            if greedy:
                chosen.append(torch.argmax(probs))
            else:
                chosen.append(torch.multinomial(probs, 1, generator=generator)[0])
        indices = torch.stack(chosen)
        log_prob, _, value = self.evaluate(states, indices.unsqueeze(0))
        return indices, float(log_prob[0]), float(value[0])
