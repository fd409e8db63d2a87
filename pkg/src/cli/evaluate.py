"""
`evaluate`: closed-loop episodes of one scenario under the evaluation
protocol.

Writes `evaluate_<scenario>.csv` as metric rows: phase `evaluate_<policy>`
with the episode index as step, then one `evaluate_<policy>_summary` row
whose step is the episode count.
"""

import argparse
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from src.cli._common import CommandContext, Stopwatch
from src.cli.finetune import resolve_scenario_id
from src.crud.crud_checkpoint import load_checkpoint
from src.crud.crud_metrics import MetricsTable
from src.service.dt.inference import evaluate_policy
from src.service.envs.base import make_env
from src.service.pipeline import scenario_prompt, summarize_returns, target_return
from src.service.rollouts import HeuristicPolicy, RandomPolicy, evaluate
from src.utils import derive_seed

logger = logging.getLogger(__name__)


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--checkpoint",
        default=None,
        help="DT checkpoint (default: <out>/finetuned_<scenario>.ckpt if present, else <out>/pretrained.ckpt)",
    )
    parser.add_argument("--scenario", default=None, help="Scenario id (default: config new_scenario)")
    parser.add_argument("--episodes", type=int, default=None, help="Episodes (default: config evaluation.episodes)")
    parser.add_argument("--policy", choices=["dt", "random", "heuristic"], default="dt")


def _default_checkpoint(ctx: CommandContext, scenario_id: str) -> Path:
    finetuned = ctx.output(f"finetuned_{scenario_id}.ckpt")
    return finetuned if finetuned.exists() else ctx.output("pretrained.ckpt")


def evaluate_scenario(
    ctx: CommandContext,
    scenario_id: str,
    policy: str,
    episodes: int,
    checkpoint: Optional[Path] = None,
) -> np.ndarray:
    """Per-episode returns of `policy` on `scenario_id`."""
    config = ctx.config
    scenario = config.scenario(scenario_id)
    seed = derive_seed(ctx.seed, "evaluate", scenario_id)
    workers = config.evaluation.workers

    def env_factory():
        return make_env(scenario)

    if policy == "dt":
        model = load_checkpoint(checkpoint or _default_checkpoint(ctx, scenario_id)).model
        target = target_return(model.scenario(scenario_id), config.evaluation)
        return evaluate_policy(model, env_factory, scenario_prompt(scenario), target, episodes, seed, workers)
    factory = RandomPolicy if policy == "random" else HeuristicPolicy
    return evaluate(factory, env_factory, episodes, seed, workers)


def run(ctx: CommandContext, args: argparse.Namespace) -> Path:
    scenario_id = resolve_scenario_id(ctx, args.scenario)
    episodes = args.episodes or ctx.config.evaluation.episodes
    checkpoint = Path(args.checkpoint) if args.checkpoint else None
    clock = Stopwatch(ctx.config.metrics.record_wall_clock)
    returns = evaluate_scenario(ctx, scenario_id, args.policy, episodes, checkpoint)
    elapsed = clock.elapsed()

    summary = summarize_returns(returns)
    logger.info(
        "Evaluated %s policy on %s: mean %.4f std %.4f over %d episodes",
        args.policy,
        scenario_id,
        summary["mean_return"],
        summary["std_return"],
        summary["episodes"],
    )
    phase = f"evaluate_{args.policy}"
    table = MetricsTable()
    for index, value in enumerate(returns):
        table.add(phase, scenario_id, index, float(value), 0.0, elapsed)
    table.add(
        f"{phase}_summary",
        scenario_id,
        summary["episodes"],
        summary["mean_return"],
        summary["std_return"],
        elapsed,
    )
    return table.write_csv(ctx.output(f"evaluate_{scenario_id}.csv"))
