"""
`finetune`: few-shot, layer-frozen adaptation to a scenario the
checkpoint has never seen.

Writes `finetuned_<scenario>.ckpt` and `finetune_loss.csv`.
"""

import argparse
import logging
from pathlib import Path

from src.cli._common import CommandContext
from src.crud.crud_checkpoint import load_checkpoint, save_checkpoint
from src.crud.crud_metrics import write_csv
from src.service.pipeline import collect_few_shot, finetune_on
from src.utils import derive_seed

logger = logging.getLogger(__name__)

LOSS_FILE = "finetune_loss.csv"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", default=None, help="Source checkpoint (default: <out>/pretrained.ckpt)")
    parser.add_argument("--scenario", default=None, help="Scenario to adapt to (default: config new_scenario)")


def resolve_scenario_id(ctx: CommandContext, requested) -> str:
    scenario_id = requested or ctx.config.new_scenario
    if not scenario_id:
        raise ValueError("no scenario given and the config has no new_scenario")
    return scenario_id


def run(ctx: CommandContext, args: argparse.Namespace) -> Path:
    config = ctx.config
    scenario = config.scenario(resolve_scenario_id(ctx, args.scenario))
    source = Path(args.checkpoint) if args.checkpoint else ctx.output("pretrained.ckpt")
    checkpoint = load_checkpoint(source)
    model = checkpoint.model
    if model.has_scenario(scenario.scenario_id):
        raise ValueError(f"checkpoint {source} already has an adapter for {scenario.scenario_id}")

    few_shot = collect_few_shot(model, scenario, config, ctx.seed, show_progress=ctx.show_progress)
    curve = finetune_on(
        model,
        scenario,
        few_shot.trajectories,
        config,
        derive_seed(ctx.seed, "finetune", scenario.scenario_id),
        show_progress=ctx.show_progress,
    )
    logger.info("Fine-tuned %s: loss %.6f -> %.6f", scenario.scenario_id, curve[0], curve[-1])

    write_csv(
        ctx.output(LOSS_FILE),
        ["scenario_id", "step", "loss"],
        [(scenario.scenario_id, step + 1, loss) for step, loss in enumerate(curve)],
    )
    tags = {
        "stage": "finetune",
        "scenario_id": scenario.scenario_id,
        "source_checkpoint": source.name,
        "few_shot_env_steps": few_shot.env_steps,
    }
    return save_checkpoint(ctx.output(f"finetuned_{scenario.scenario_id}.ckpt"), model, ctx.seed, tags)
