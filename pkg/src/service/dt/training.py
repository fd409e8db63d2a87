"""
Supervised Decision-Transformer training.

`pretrain` fits the shared trunk and every adapter on a multi-scenario
dataset; each sample of a batch first draws its scenario uniformly, then
a trajectory and a window end. `finetune` trains a new scenario's adapter
(and whatever else is not frozen) on a few-shot set, weighting
non-expert trajectories down, and proves afterwards that every frozen
tensor is bit-identical to its starting value.

The prompt of a training window carries the trajectory's own return as
its desired return (hindsight relabelling); at evaluation time it carries
the target return.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Set

import numpy as np
import torch
from tqdm import tqdm

from src import numerics
from src.models import Prompt
from src.schemas import FreezeSpec, TrainingSchedule, UnknownScenarioError
from src.service.dt.dt_model import DTModel, ScenarioInfo
from src.service.dt.tokenizer import SampleBatch, collate, sample_window
from src.service.dt.trajectory import Trajectory

logger = logging.getLogger(__name__)


class EmptyDatasetError(ValueError):
    """Training was asked to run without any trajectories."""


class FreezeViolationError(AssertionError):
    """A frozen parameter changed during fine-tuning."""


@dataclass
class WeightedTrajectory:
    trajectory: Trajectory
    prompt: Prompt
    weight: float


def prepare_examples(
    trajectories: Sequence[Trajectory],
    prompts: Mapping[str, Prompt],
    non_expert_weight: float = 1.0,
) -> Dict[str, List[WeightedTrajectory]]:
    """Group trajectories by scenario with hindsight prompts and loss weights."""
    grouped: Dict[str, List[WeightedTrajectory]] = {}
    for trajectory in trajectories:
        if trajectory.scenario_id not in prompts:
            raise UnknownScenarioError(trajectory.scenario_id)
        prompt = prompts[trajectory.scenario_id].with_return(trajectory.total_return)
        weight = 1.0 if trajectory.expert_flag else non_expert_weight
        grouped.setdefault(trajectory.scenario_id, []).append(WeightedTrajectory(trajectory, prompt, weight))
    return {sid: grouped[sid] for sid in sorted(grouped)}


def sample_batches(
    examples: Mapping[str, List[WeightedTrajectory]],
    batch_size: int,
    context_len: int,
    rng: np.random.Generator,
) -> List[SampleBatch]:
    """One training batch, split into per-scenario sub-batches."""
    ids = sorted(examples)
    picks: Dict[str, list] = {sid: [] for sid in ids}
    for scenario_index in rng.integers(len(ids), size=batch_size):
        pool = examples[ids[scenario_index]]
        example = pool[int(rng.integers(len(pool)))]
        picks[ids[scenario_index]].append(
            sample_window(example.trajectory, example.prompt, context_len, rng, weight=example.weight)
        )
    return [collate(samples) for sid, samples in picks.items() if samples]


def training_loss(model: DTModel, batches: Sequence[SampleBatch]) -> torch.Tensor:
    """
    Weighted action loss averaged over every real action slot.

    Only action slots are targets; returns and states are inputs.

    Raises:
        EmptyDatasetError: no real slots in `batches`
        NonFiniteError: the loss is NaN/Inf
    """
    weighted_sum = torch.zeros(())
    slots = 0
    for batch in batches:
        hidden = model(batch)
        mask = batch.step_mask
        codec = model.adapter(batch.scenario_id).codec
        per_slot = codec.loss(hidden[mask], batch.actions[mask])
        weights = batch.weights[:, None].expand(mask.shape)[mask]
        weighted_sum = weighted_sum + (weights * per_slot).sum()
        slots += int(mask.sum())
    if slots == 0:
        raise EmptyDatasetError("batch holds no action slots")
    loss = weighted_sum / slots
    numerics.ensure_finite(loss.detach(), "training loss")
    return loss


def return_statistics(trajectories: Sequence[Trajectory]) -> Dict[str, float]:
    """Return scale and range used to build a ScenarioInfo."""
    returns = np.asarray([t.total_return for t in trajectories], dtype=np.float64)
    if returns.size == 0:
        raise EmptyDatasetError("no trajectories to take return statistics from")
    return {
        "return_scale": float(max(1.0, np.abs(returns).max())),
        "max_return": float(returns.max()),
        "min_return": float(returns.min()),
    }


def _check_adapters(model: DTModel, trajectories: Sequence[Trajectory]) -> None:
    for trajectory in trajectories:
        info = model.scenario(trajectory.scenario_id)
        if trajectory.state_dim != info.state_dim:
            raise numerics.ShapeMismatchError(
                f"scenario {trajectory.scenario_id}: trajectory state width {trajectory.state_dim}, "
                f"adapter expects {info.state_dim}"
            )
        if trajectory.actions.shape[1] != info.action_space.num_parts:
            raise numerics.ShapeMismatchError(
                f"scenario {trajectory.scenario_id}: action rows of {trajectory.actions.shape[1]}, "
                f"adapter expects {info.action_space.num_parts}"
            )


def optimise(  # pylint: disable=too-many-arguments
    model: DTModel,
    trainable: Mapping[str, torch.nn.Parameter],
    examples: Mapping[str, List[WeightedTrajectory]],
    schedule: TrainingSchedule,
    seed: int,
    phase: str,
    extra_loss: Optional[Callable[[], torch.Tensor]] = None,
    show_progress: bool = False,
) -> List[float]:
    """
    AdamW loop shared by pretraining, fine-tuning and distillation.

    With no trainable parameters the loss is still computed and recorded
    but nothing is updated.

    Returns:
        List[float]: total loss at every step
    """
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    context_len = model.settings.context_len
    optimizer = None
    if trainable:
        optimizer = numerics.build_adamw(
            trainable.values(), lr=schedule.learning_rate, weight_decay=schedule.weight_decay
        )

    model.train()
    curve: List[float] = []
    for step in tqdm(range(schedule.steps), desc=phase, disable=not show_progress):
        batches = sample_batches(examples, schedule.batch_size, context_len, rng)
        loss = training_loss(model, batches)
        if extra_loss is not None:
            loss = loss + extra_loss()
        if optimizer is not None:
            grads = numerics.backward(loss, trainable)
            numerics.adamw_step(trainable, grads, optimizer, max_grad_norm=schedule.grad_clip)
        curve.append(float(loss.detach()))
        if (step + 1) % schedule.log_every == 0:
            logger.info("%s step %d/%d loss %.6f", phase, step + 1, schedule.steps, curve[-1])
    model.eval()
    return curve


def pretrain(
    model: DTModel,
    trajectories: Sequence[Trajectory],
    prompts: Mapping[str, Prompt],
    schedule: TrainingSchedule,
    seed: int,
    show_progress: bool = False,
) -> List[float]:
    """
    Fit trunk, shared embeddings and all adapters on a multi-scenario dataset.

    Every trajectory's scenario must already have an adapter.

    Returns:
        List[float]: loss curve, one entry per step

    Raises:
        EmptyDatasetError: no trajectories
        UnknownScenarioError: a trajectory's scenario has no adapter/prompt
        ShapeMismatchError: trajectory widths disagree with the adapter
    """
    if not trajectories:
        raise EmptyDatasetError("pretraining needs at least one trajectory")
    _check_adapters(model, trajectories)
    examples = prepare_examples(trajectories, prompts)
    logger.info(
        "Pretraining on %d trajectories across scenarios %s for %d steps",
        len(trajectories),
        list(examples),
        schedule.steps,
    )
    trainable = {name: p for name, p in model.named_parameters() if p.requires_grad}
    return optimise(model, trainable, examples, schedule, seed, "pretrain", show_progress=show_progress)


def attach_scenario(model: DTModel, scenario_id: str, info: ScenarioInfo) -> None:
    """Register a new scenario, warm-starting from the dimensionally nearest adapter."""
    source = model.nearest_scenario(info.state_dim, info.action_space)
    model.add_scenario(scenario_id, info, init_from=source)


def resolve_freeze_groups(model: DTModel, groups: Sequence[str]) -> Set[str]:
    """
    Parameter names covered by the prefixes in `groups`.

    Raises:
        ValueError: a group matches no parameter
    """
    names = [name for name, _ in model.named_parameters()]
    frozen: Set[str] = set()
    for group in groups:
        matched = {n for n in names if n == group or n.startswith(group + ".")}
        if not matched:
            raise ValueError(f"freeze group {group!r} matches no parameter")
        frozen |= matched
    return frozen


def finetune(  # pylint: disable=too-many-arguments
    model: DTModel,
    scenario_id: str,
    trajectories: Sequence[Trajectory],
    prompt: Prompt,
    freeze: FreezeSpec,
    schedule: TrainingSchedule,
    seed: int,
    non_expert_weight: float,
    show_progress: bool = False,
) -> List[float]:
    """
    Few-shot fine-tuning of one scenario with frozen parameter groups.

    The scenario's adapter must exist (see `attach_scenario`). Frozen
    tensors are snapshotted and compared bit-for-bit afterwards.

    Returns:
        List[float]: loss curve

    Raises:
        EmptyDatasetError: no few-shot trajectories
        FreezeViolationError: a frozen tensor changed
    """
    if not trajectories:
        raise EmptyDatasetError(f"few-shot set for {scenario_id} is empty")
    foreign = {t.scenario_id for t in trajectories} - {scenario_id}
    if foreign:
        raise ValueError(f"few-shot set for {scenario_id} contains other scenarios: {sorted(foreign)}")
    _check_adapters(model, trajectories)

    frozen = resolve_freeze_groups(model, freeze.groups)
    params = dict(model.named_parameters())
    snapshot = {name: params[name].detach().clone() for name in frozen}
    previous_flags = {name: p.requires_grad for name, p in params.items()}
    for name in frozen:
        params[name].requires_grad_(False)
    # adapters of other scenarios see no gradient here; keep them out of AdamW's decay
    own_adapter = f"adapters.{scenario_id}."
    trainable = {
        name: p
        for name, p in params.items()
        if name not in frozen and (not name.startswith("adapters.") or name.startswith(own_adapter))
    }
    logger.info(
        "Fine-tuning %s on %d trajectories: %d frozen / %d trainable tensors",
        scenario_id,
        len(trajectories),
        len(frozen),
        len(trainable),
    )

    examples = prepare_examples(trajectories, {scenario_id: prompt}, non_expert_weight)
    try:
        curve = optimise(model, trainable, examples, schedule, seed, "finetune", show_progress=show_progress)
    finally:
        for name, flag in previous_flags.items():
            params[name].requires_grad_(flag)

    for name in sorted(frozen):
        if not torch.equal(params[name].detach(), snapshot[name]):
            raise FreezeViolationError(f"frozen parameter {name} changed during fine-tuning")
    return curve
