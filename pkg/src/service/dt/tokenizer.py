"""
Trajectory windows -> per-modality model inputs.

`tokenize` cuts the last <= K steps ending at `end` out of a trajectory
and pairs them with the prompt vector. `collate` left-pads a list of
windows from one scenario into a `SampleBatch`; `DTModel.embed_tokens`
turns that into the token sequence

    [prompt] ++ (R_t, s_t, a_t) for each kept step

with each modality embedded by its own linear map and the timestep
embedding of t added to all three tokens of step t.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import torch

from src.models import Prompt
from src.service.dt.trajectory import Trajectory


@dataclass
class TokenizedSample:
    """
    One context window.

    Attributes:
        scenario_id: Adapter to route through
        prompt: (P,) prompt vector
        returns: (L,) returns-to-go of the kept steps
        states: (L, S)
        actions: (L, A) target action rows
        timesteps: (L,) absolute step indices
        weight: Loss weight of the window
    """

    scenario_id: str
    prompt: np.ndarray
    returns: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    timesteps: np.ndarray
    weight: float = 1.0

    @property
    def num_steps(self) -> int:
        return int(self.returns.shape[0])

    @property
    def sequence_length(self) -> int:
        return 1 + 3 * self.num_steps


@dataclass
class SampleBatch:
    """Left-padded windows of a single scenario, as tensors."""

    scenario_id: str
    prompts: torch.Tensor  # (B, P)
    returns: torch.Tensor  # (B, L)
    states: torch.Tensor  # (B, L, S)
    actions: torch.Tensor  # (B, L, A)
    timesteps: torch.Tensor  # (B, L) long
    step_mask: torch.Tensor  # (B, L) bool, True on real steps
    weights: torch.Tensor  # (B,)

    @property
    def size(self) -> int:
        return int(self.returns.shape[0])


def tokenize(
    trajectory: Trajectory,
    prompt: Prompt,
    context_len: int,
    end: Optional[int] = None,
    weight: float = 1.0,
) -> TokenizedSample:
    """
    Window of the last <= context_len steps before `end` (default: episode end).

    Raises:
        ValueError: context_len < 1 or `end` outside [1, T]
    """
    if context_len < 1:
        raise ValueError(f"context_len must be >= 1, got {context_len}")
    length = trajectory.length
    end = length if end is None else int(end)
    if not 1 <= end <= length:
        raise ValueError(f"window end {end} outside [1, {length}]")
    start = max(0, end - context_len)
    return TokenizedSample(
        scenario_id=trajectory.scenario_id,
        prompt=prompt.vector(),
        returns=trajectory.returns_to_go[start:end],
        states=trajectory.states[start:end],
        actions=trajectory.actions[start:end],
        timesteps=np.arange(start, end),
        weight=float(weight),
    )


def sample_window(
    trajectory: Trajectory,
    prompt: Prompt,
    context_len: int,
    rng: np.random.Generator,
    weight: float = 1.0,
) -> TokenizedSample:
    """Window whose end step is drawn uniformly from [1, T]."""
    end = int(rng.integers(1, trajectory.length + 1))
    return tokenize(trajectory, prompt, context_len, end=end, weight=weight)


def collate(samples: List[TokenizedSample]) -> SampleBatch:
    """
    Stack windows of one scenario, left-padding shorter ones.

    Raises:
        ValueError: empty list or mixed scenarios
    """
    if not samples:
        raise ValueError("cannot collate an empty list of samples")
    scenario_ids = {s.scenario_id for s in samples}
    if len(scenario_ids) != 1:
        raise ValueError(f"samples span several scenarios: {sorted(scenario_ids)}")

    batch = len(samples)
    steps = max(s.num_steps for s in samples)
    state_dim = samples[0].states.shape[1]
    action_dim = samples[0].actions.shape[1]

    returns = np.zeros((batch, steps))
    states = np.zeros((batch, steps, state_dim))
    actions = np.zeros((batch, steps, action_dim))
    timesteps = np.zeros((batch, steps), dtype=np.int64)
    mask = np.zeros((batch, steps), dtype=bool)
    for i, sample in enumerate(samples):
        offset = steps - sample.num_steps
        returns[i, offset:] = sample.returns
        states[i, offset:] = sample.states
        actions[i, offset:] = sample.actions
        timesteps[i, offset:] = sample.timesteps
        mask[i, offset:] = True

    return SampleBatch(
        scenario_id=samples[0].scenario_id,
        prompts=torch.as_tensor(np.stack([s.prompt for s in samples])),
        returns=torch.as_tensor(returns),
        states=torch.as_tensor(states),
        actions=torch.as_tensor(actions),
        timesteps=torch.as_tensor(timesteps),
        step_mask=torch.as_tensor(mask),
        weights=torch.as_tensor([s.weight for s in samples], dtype=torch.float64),
    )
