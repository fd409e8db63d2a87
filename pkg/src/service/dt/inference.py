"""
Closed-loop Decision-Transformer control.

`RunningContext` keeps the last K steps of an episode. Each step's
return-to-go slot holds max(target - rewards accrued so far, 0); steps
older than K are evicted but their rewards stay in the accrued total.
The current step enters the context with a placeholder action, which the
state-token readout never sees.
"""

import copy
import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, Deque, Optional

import numpy as np
import torch

from src.models import HybridAction, Prompt
from src.service.dt.dt_model import DTModel
from src.service.dt.tokenizer import TokenizedSample, collate
from src.service.dt.trajectory import Trajectory
from src.service.envs.base import BaseEnvironment
from src.service.rollouts import EpisodePolicy, evaluate, run_episode

logger = logging.getLogger(__name__)


@dataclass
class _Step:
    timestep: int
    return_to_go: float
    state: np.ndarray
    action: Optional[np.ndarray] = None


class RunningContext:
    """Sliding window of the current episode for one scenario."""

    def __init__(self, context_len: int, target_return: float, action_width: int):
        self.context_len = context_len
        self.target_return = float(target_return)
        self.action_width = action_width
        self.accrued = 0.0
        self._steps: Deque[_Step] = deque(maxlen=context_len)

    @property
    def next_return_to_go(self) -> float:
        return max(self.target_return - self.accrued, 0.0)

    def __len__(self) -> int:
        return len(self._steps)

    def observe(self, state: np.ndarray, timestep: int) -> None:
        """Open a new step with `state`; evicts the oldest step beyond K."""
        if self._steps and self._steps[-1].action is None:
            raise RuntimeError("previous step has no recorded action")
        self._steps.append(_Step(int(timestep), self.next_return_to_go, np.asarray(state, dtype=np.float64)))

    def record(self, action_row: np.ndarray, reward: float) -> None:
        """Close the open step with the action taken and its reward."""
        if not self._steps or self._steps[-1].action is not None:
            raise RuntimeError("no open step to record into")
        self._steps[-1].action = np.asarray(action_row, dtype=np.float64)
        self.accrued += float(reward)

    def to_sample(self, scenario_id: str, prompt: Prompt) -> TokenizedSample:
        if not self._steps:
            raise RuntimeError("context is empty")
        placeholder = np.zeros(self.action_width)
        return TokenizedSample(
            scenario_id=scenario_id,
            prompt=prompt.vector(),
            returns=np.asarray([s.return_to_go for s in self._steps]),
            states=np.stack([s.state for s in self._steps]),
            actions=np.stack([placeholder if s.action is None else s.action for s in self._steps]),
            timesteps=np.asarray([s.timestep for s in self._steps], dtype=np.int64),
        )


@torch.no_grad()
def predict_action(model: DTModel, scenario_id: str, context: RunningContext, prompt: Prompt) -> HybridAction:
    """Decode the action for the newest state in `context` (eval mode)."""
    model.eval()
    batch = collate([context.to_sample(scenario_id, prompt.with_return(context.target_return))])
    hidden = model(batch)[:, -1]
    codec = model.adapter(scenario_id).codec
    row = codec.decode(hidden)[0].numpy()
    return codec.space.unflatten(row)


class DTPolicy(EpisodePolicy):
    """EpisodePolicy driving a DTModel towards a target return."""

    def __init__(self, model: DTModel, prompt: Prompt, target_return: float):
        self.model = model
        self.prompt = prompt
        self.target_return = float(target_return)
        self.context: Optional[RunningContext] = None
        self._scenario_id = ""
        self._timestep = 0

    def begin(self, env, state, seed):
        self._scenario_id = env.scenario.scenario_id
        width = env.action_space.num_parts
        self.context = RunningContext(self.model.settings.context_len, self.target_return, width)
        self._timestep = 0

    def act(self, state):
        self.context.observe(state, self._timestep)
        return predict_action(self.model, self._scenario_id, self.context, self.prompt)

    def record(self, action, reward):
        space = self.model.scenario(self._scenario_id).action_space
        self.context.record(space.flatten(action), reward)
        self._timestep += 1


def rollout(
    model: DTModel, env: BaseEnvironment, prompt: Prompt, target_return: float, seed: int
) -> Trajectory:
    """One closed-loop DT episode from `env.reset(seed)`; the trajectory's total_return is the achieved return."""
    return run_episode(env, DTPolicy(model, prompt, target_return), seed)


def evaluate_policy(
    model: DTModel,
    env_factory: Callable[[], BaseEnvironment],
    prompt: Prompt,
    target_return: float,
    episodes: int,
    seed: int,
    workers: int = 1,
) -> np.ndarray:
    """
    Per-episode returns of the DT over `episodes` episodes.

    Every worker thread gets a deep copy of the model.
    """
    model.eval()
    returns = evaluate(
        lambda: DTPolicy(copy.deepcopy(model) if workers > 1 else model, prompt, target_return),
        env_factory,
        episodes,
        seed,
        workers,
    )
    logger.info(
        "DT evaluation: %d episodes, target %.3f, mean %.4f, std %.4f",
        episodes,
        target_return,
        float(returns.mean()),
        float(returns.std()),
    )
    return returns
