"""
Lightweight students and parameter-similarity distillation.

A student shares the teacher's adapters, embeddings and layout but uses a
cheaper trunk (sparse window and/or head-shared projections). Student
parameters are paired with teacher parameters by name:

  - identical shapes compare directly;
  - a head-shared projection (d/H rows) compares to the mean of the
    teacher's H per-head row blocks;
  - per-head query offsets have no teacher counterpart and are exempt.

Any other student parameter without a partner is an error.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Sequence

import torch

from src.models import Prompt
from src.schemas import TrainingSchedule, TransformerConfig
from src.service.dt.dt_model import DTModel
from src.service.dt.training import EmptyDatasetError, optimise, prepare_examples
from src.service.dt.trajectory import Trajectory

logger = logging.getLogger(__name__)

EXEMPT_SUFFIXES = ("head_query_offset",)


class UnmappedParameterError(KeyError):
    """A student parameter has no teacher counterpart and no exemption."""


@dataclass(frozen=True)
class SimilarityPair:
    """Teacher tensor a student tensor is compared against; `groups` > 1 means head mean."""

    teacher_name: str
    groups: int = 1


def _reduce(tensor: torch.Tensor, groups: int) -> torch.Tensor:
    if groups == 1:
        return tensor
    return tensor.reshape(groups, tensor.shape[0] // groups, *tensor.shape[1:]).mean(dim=0)


def build_similarity_mapping(
    teacher_params: Mapping[str, torch.Tensor],
    student_params: Mapping[str, torch.Tensor],
) -> Dict[str, SimilarityPair]:
    """
    Pair every non-exempt student tensor with a teacher tensor.

    Raises:
        UnmappedParameterError: no same-name teacher tensor, or shapes
            that are neither equal nor a head-mean reduction
    """
    mapping: Dict[str, SimilarityPair] = {}
    for name, student in student_params.items():
        if name.endswith(EXEMPT_SUFFIXES):
            continue
        teacher = teacher_params.get(name)
        if teacher is None:
            raise UnmappedParameterError(name)
        if teacher.shape == student.shape:
            mapping[name] = SimilarityPair(name)
        elif (
            teacher.dim() == student.dim()
            and teacher.shape[1:] == student.shape[1:]
            and teacher.shape[0] % student.shape[0] == 0
        ):
            mapping[name] = SimilarityPair(name, teacher.shape[0] // student.shape[0])
        else:
            raise UnmappedParameterError(
                f"{name}: student {tuple(student.shape)} vs teacher {tuple(teacher.shape)}"
            )
    return mapping


def similarity_loss(
    teacher_params: Mapping[str, torch.Tensor],
    student_params: Mapping[str, torch.Tensor],
    mapping: Mapping[str, SimilarityPair],
) -> torch.Tensor:
    """Mean squared difference over all mapped scalars (teacher side is constant)."""
    total = torch.zeros(())
    count = 0
    for name, pair in mapping.items():
        target = _reduce(teacher_params[pair.teacher_name].detach(), pair.groups)
        diff = student_params[name] - target
        total = total + (diff * diff).sum()
        count += diff.numel()
    if count == 0:
        return total
    return total / count


def init_student_from_teacher(teacher: DTModel, transformer: TransformerConfig) -> DTModel:
    """Student with `transformer` as trunk, every mapped tensor copied (or head-averaged) from the teacher."""
    settings = teacher.settings.model_copy(update={"transformer": transformer})
    student = DTModel.from_registry(settings, teacher.prompt_dim, teacher.registry())
    teacher_params = dict(teacher.named_parameters())
    student_params = dict(student.named_parameters())
    mapping = build_similarity_mapping(teacher_params, student_params)
    with torch.no_grad():
        for name, pair in mapping.items():
            student_params[name].copy_(_reduce(teacher_params[pair.teacher_name], pair.groups))
    student.eval()
    return student


def distill(  # pylint: disable=too-many-arguments
    student: DTModel,
    teacher: DTModel,
    trajectories: Sequence[Trajectory],
    prompts: Mapping[str, Prompt],
    beta: float,
    schedule: TrainingSchedule,
    seed: int,
    show_progress: bool = False,
) -> list:
    """
    Train `student` on the action loss plus beta x similarity to `teacher`.

    Returns:
        list: loss curve (action + weighted similarity)
    """
    if not trajectories:
        raise EmptyDatasetError("distillation needs at least one trajectory")
    teacher_params = {name: p.detach().clone() for name, p in teacher.named_parameters()}
    student_params = dict(student.named_parameters())
    mapping = build_similarity_mapping(teacher_params, student_params)
    logger.info(
        "Distilling into %s trunk: %d mapped tensors, beta=%.3f",
        student.settings.transformer.attention_variant,
        len(mapping),
        beta,
    )

    def similarity_term() -> torch.Tensor:
        return beta * similarity_loss(teacher_params, student_params, mapping)

    examples = prepare_examples(trajectories, prompts)
    trainable = {name: p for name, p in student_params.items() if p.requires_grad}
    return optimise(
        student,
        trainable,
        examples,
        schedule,
        seed,
        "distill",
        extra_loss=similarity_term,
        show_progress=show_progress,
    )
