"""
`collect`: expert datasets for every pretraining scenario.

Writes `dataset.jsonl` and, for PPO experts, `ppo_curves.csv`.
"""

import argparse
import logging
from pathlib import Path

from src.cli._common import CommandContext, Stopwatch
from src.crud.crud_dataset import save_dataset
from src.crud.crud_metrics import MetricsTable
from src.service.pipeline import collect_scenario

logger = logging.getLogger(__name__)

DATASET_FILE = "dataset.jsonl"
PPO_CURVES_FILE = "ppo_curves.csv"


def add_arguments(parser: argparse.ArgumentParser) -> None:  # pylint: disable=unused-argument
    """No command-specific options."""


def run(ctx: CommandContext, args: argparse.Namespace) -> Path:  # pylint: disable=unused-argument
    config = ctx.config
    clock = Stopwatch(config.metrics.record_wall_clock)
    table = MetricsTable()
    trajectories = []
    scenarios = [config.scenario(sid) for sid in config.pretrain_ids]
    for scenario in scenarios:
        outcome = collect_scenario(scenario, config, ctx.seed, ctx.show_progress)
        for point in outcome.curve:
            table.add(
                "ppo", scenario.scenario_id, point.env_steps, point.mean_return, point.std_return, clock.elapsed()
            )
        experts = sum(t.expert_flag for t in outcome.trajectories)
        logger.info(
            "Scenario %s: %d trajectories, %d expert (%.1f%%)",
            scenario.scenario_id,
            len(outcome.trajectories),
            experts,
            100.0 * experts / max(1, len(outcome.trajectories)),
        )
        trajectories.extend(outcome.trajectories)

    path = save_dataset(ctx.output(DATASET_FILE), trajectories, scenarios, config.task)
    if len(table):
        table.write_csv(ctx.output(PPO_CURVES_FILE))
    return path
