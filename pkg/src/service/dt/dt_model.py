"""
Decision Transformer with a shared trunk and per-scenario adapters.

Token layout for a window of L steps (left-padded in a batch):

    index 0          prompt token
    index 1 + 3i     return-to-go of step i
    index 2 + 3i     state of step i
    index 3 + 3i     action of step i

The action of step i is read from the trunk output at the state token
2 + 3i, which by causality sees the prompt and everything up to s_i but
not a_i. Scenario-specific shapes (state width, action parts) live in
`ScenarioAdapter`s keyed by scenario id; prompt, return and timestep
embeddings and the trunk are shared.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import torch
from torch import nn

from src.models import ActionSpace
from src.schemas import DTModelSettings, UnknownScenarioError
from src.service.dt.action_codec import ActionCodec
from src.service.dt.tokenizer import SampleBatch
from src.service.transformer import CausalTransformer, LayerNorm

logger = logging.getLogger(__name__)


@dataclass
class ScenarioInfo:
    """
    Registry entry of one adapter.

    Attributes:
        state_dim: State feature width
        action_space: Legal actions
        return_scale: Divisor applied to returns before embedding
        max_return / min_return: Dataset return range (target-return rules)
    """

    state_dim: int
    action_space: ActionSpace
    return_scale: float = 1.0
    max_return: float = 0.0
    min_return: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "state_dim": self.state_dim,
            "action_space": self.action_space.to_dict(),
            "return_scale": self.return_scale,
            "max_return": self.max_return,
            "min_return": self.min_return,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ScenarioInfo":
        return cls(
            state_dim=int(data["state_dim"]),
            action_space=ActionSpace.from_dict(data["action_space"]),
            return_scale=float(data["return_scale"]),
            max_return=float(data["max_return"]),
            min_return=float(data["min_return"]),
        )


class ScenarioAdapter(nn.Module):
    """State input projection, action codec and action input projection."""

    def __init__(self, state_dim: int, action_space: ActionSpace, model_dim: int):
        super().__init__()
        self.state_in = nn.Linear(state_dim, model_dim)
        self.codec = ActionCodec(action_space, model_dim)
        self.action_in = nn.Linear(self.codec.embedding_dim, model_dim)


def _copy_overlap(target: torch.Tensor, source: torch.Tensor) -> None:
    """Copy the leading block the two tensors share into `target`."""
    if target.dim() != source.dim():
        return
    block = tuple(slice(0, min(a, b)) for a, b in zip(target.shape, source.shape))
    target[block] = source[block]


class DTModel(nn.Module):
    """Prompted, return-conditioned causal policy over hybrid actions."""

    def __init__(self, settings: DTModelSettings, prompt_dim: int):
        super().__init__()
        self.settings = settings
        self.prompt_dim = prompt_dim
        d = settings.transformer.model_dim
        self.trunk = CausalTransformer(settings.transformer)
        self.embed_prompt = nn.Linear(prompt_dim, d)
        self.embed_return = nn.Linear(1, d)
        self.embed_timestep = nn.Embedding(settings.max_timestep, d)
        self.embed_ln = LayerNorm(d)
        self.final_ln = LayerNorm(d)
        self.adapters = nn.ModuleDict()
        self.scenarios: Dict[str, ScenarioInfo] = {}

    # ------------------------------------------------------------------
    # Scenario registry
    # ------------------------------------------------------------------

    def has_scenario(self, scenario_id: str) -> bool:
        return scenario_id in self.scenarios

    def scenario(self, scenario_id: str) -> ScenarioInfo:
        if scenario_id not in self.scenarios:
            raise UnknownScenarioError(scenario_id)
        return self.scenarios[scenario_id]

    def adapter(self, scenario_id: str) -> ScenarioAdapter:
        self.scenario(scenario_id)
        return self.adapters[scenario_id]

    def nearest_scenario(self, state_dim: int, action_space: ActionSpace) -> Optional[str]:
        """Registered scenario whose adapter shapes are closest; ties -> smallest id."""
        if not self.scenarios:
            return None

        def distance(item: Tuple[str, ScenarioInfo]) -> Tuple[int, str]:
            sid, info = item
            gap = abs(info.state_dim - state_dim) + abs(info.action_space.num_parts - action_space.num_parts)
            return gap, sid

        return min(self.scenarios.items(), key=distance)[0]

    def add_scenario(
        self,
        scenario_id: str,
        info: ScenarioInfo,
        init_from: Optional[str] = None,
    ) -> ScenarioAdapter:
        """
        Register a new adapter.

        With `init_from`, tensors whose shapes match the source adapter are
        copied; differing shapes get the overlapping leading block copied
        and keep their fresh random init elsewhere.

        Raises:
            ValueError: scenario already registered
        """
        if scenario_id in self.scenarios:
            raise ValueError(f"scenario {scenario_id} already has an adapter")
        adapter = ScenarioAdapter(info.state_dim, info.action_space, self.settings.transformer.model_dim)
        if init_from is not None:
            source = self.adapter(init_from).state_dict()
            with torch.no_grad():
                for name, tensor in adapter.state_dict().items():
                    if name not in source:
                        continue
                    if source[name].shape == tensor.shape:
                        tensor.copy_(source[name])
                    else:
                        _copy_overlap(tensor, source[name])
            logger.info("Adapter %s initialised from %s", scenario_id, init_from)
        self.adapters[scenario_id] = adapter
        self.scenarios[scenario_id] = info
        return adapter

    def registry(self) -> List[Dict[str, Any]]:
        return [{"scenario_id": sid, **info.to_dict()} for sid, info in self.scenarios.items()]

    @classmethod
    def from_registry(
        cls, settings: DTModelSettings, prompt_dim: int, registry: List[Dict[str, Any]]
    ) -> "DTModel":
        model = cls(settings, prompt_dim)
        for entry in registry:
            model.add_scenario(entry["scenario_id"], ScenarioInfo.from_dict(entry))
        return model

    # ------------------------------------------------------------------
    # Forward
    # ------------------------------------------------------------------

    def embed_tokens(self, batch: SampleBatch) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Build the (B, 1 + 3L, d) token sequence and its key-padding mask.

        Returns:
            (tokens, padding) where padding is True on padded positions
        """
        info = self.scenario(batch.scenario_id)
        adapter = self.adapters[batch.scenario_id]
        size, steps = batch.returns.shape

        time = self.embed_timestep(batch.timesteps.clamp(0, self.settings.max_timestep - 1))
        returns = self.embed_return((batch.returns / info.return_scale).unsqueeze(-1)) + time
        states = adapter.state_in(batch.states) + time
        actions = adapter.action_in(adapter.codec.embed(batch.actions)) + time
        steps_tokens = torch.stack([returns, states, actions], dim=2).reshape(size, 3 * steps, -1)

        prompts = batch.prompts.clone()
        prompts[:, 0] = prompts[:, 0] / info.return_scale
        tokens = torch.cat([self.embed_prompt(prompts).unsqueeze(1), steps_tokens], dim=1)

        step_padding = (~batch.step_mask).repeat_interleave(3, dim=1)
        padding = torch.cat([torch.zeros(size, 1, dtype=torch.bool), step_padding], dim=1)
        return self.embed_ln(tokens), padding

    def forward(self, batch: SampleBatch) -> torch.Tensor:
        """Trunk outputs at the state tokens, (B, L, d)."""
        tokens, padding = self.embed_tokens(batch)
        hidden = self.final_ln(self.trunk(tokens, padding))
        return hidden[:, 2::3]
