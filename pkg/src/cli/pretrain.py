"""
`pretrain`: multi-scenario DT pretraining, then optional distillation
into a lightweight student.

Writes `pretrained.ckpt`, `pretrain_loss.csv` and, when the lightweight
stage is enabled, `lightweight.ckpt`.
"""

import argparse
import logging
from pathlib import Path

from src.cli._common import CommandContext
from src.crud.crud_checkpoint import save_checkpoint
from src.crud.crud_dataset import load_dataset
from src.crud.crud_metrics import write_csv
from src.service.dt.lightweight import distill, init_student_from_teacher
from src.service.dt.training import pretrain
from src.service.pipeline import build_model, scenario_prompt
from src.service.transformer import count_parameters
from src.utils import derive_seed

logger = logging.getLogger(__name__)

PRETRAINED_FILE = "pretrained.ckpt"
LIGHTWEIGHT_FILE = "lightweight.ckpt"
LOSS_FILE = "pretrain_loss.csv"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", default=None, help="Dataset file (default: <out>/dataset.jsonl)")


def run(ctx: CommandContext, args: argparse.Namespace) -> Path:
    config = ctx.config
    dataset_path = Path(args.dataset) if args.dataset else ctx.output("dataset.jsonl")
    dataset = load_dataset(dataset_path)
    if dataset.task != config.task:
        raise ValueError(f"dataset task {dataset.task} does not match run task {config.task}")

    model = build_model(config, dataset.scenarios, dataset.trajectories, ctx.seed)
    prompts = {sid: scenario_prompt(scenario) for sid, scenario in dataset.scenarios.items()}
    curve = pretrain(
        model, dataset.trajectories, prompts, config.pretrain, derive_seed(ctx.seed, "pretrain"), ctx.show_progress
    )
    logger.info("Pretraining loss %.6f -> %.6f over %d steps", curve[0], curve[-1], len(curve))
    rows = [("pretrain", step + 1, loss) for step, loss in enumerate(curve)]
    path = save_checkpoint(ctx.output(PRETRAINED_FILE), model, ctx.seed, {"stage": "pretrain"})

    spec = config.lightweight
    if spec.enabled:
        student_config = config.model.transformer.derive(
            attention_variant=spec.attention_variant, window=spec.window
        )
        student = init_student_from_teacher(model, student_config)
        logger.info(
            "Lightweight trunk: %d parameters vs %d dense",
            count_parameters(student_config),
            count_parameters(config.model.transformer),
        )
        distill_curve = distill(
            student,
            model,
            dataset.trajectories,
            prompts,
            spec.beta,
            spec.schedule,
            derive_seed(ctx.seed, "distill"),
            ctx.show_progress,
        )
        rows += [("distill", step + 1, loss) for step, loss in enumerate(distill_curve)]
        save_checkpoint(ctx.output(LIGHTWEIGHT_FILE), student, ctx.seed, {"stage": "lightweight"})

    write_csv(ctx.output(LOSS_FILE), ["phase", "step", "loss"], rows)
    return path
