"""
`compare`: DT-FT vs PPO-from-scratch vs random on the new scenario.

Each arm gets the same env-step budget. PPO is charged its training
steps; DT-FT is charged its few-shot collection (including any PPO
training behind it), every later DT rollout round and every evaluation
episode; the random arm is charged its evaluation episodes. Evaluation
episodes are charged episode_len steps each.

Writes `compare_<scenario>.csv` (arm, env_steps, mean_return, std) and
`compare_<scenario>_summary.json` with the speedup statistic.
"""

import argparse
import json
import logging
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np

from src.cli._common import CommandContext, Stopwatch
from src.cli.finetune import resolve_scenario_id
from src.crud.crud_checkpoint import load_checkpoint
from src.crud.crud_metrics import write_csv
from src.schemas import RunConfig
from src.service.dt.dt_model import DTModel
from src.service.dt.inference import evaluate_policy
from src.service.envs.base import make_env
from src.service.metrics import speedup_statistic
from src.service.pipeline import (
    AnyScenario,
    collect_few_shot,
    finetune_on,
    flag_by_percentile,
    refresh_return_statistics,
    scenario_prompt,
    target_return,
)
from src.service.ppo.algorithm import CurvePoint
from src.service.ppo.algorithm import train as ppo_train
from src.service.rollouts import RandomPolicy, evaluate
from src.utils import derive_seed

logger = logging.getLogger(__name__)

COMPARE_COLUMNS = ["arm", "env_steps", "mean_return", "std"]


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", default=None, help="Pretrained checkpoint (default: <out>/pretrained.ckpt)")
    parser.add_argument("--scenario", default=None, help="Scenario id (default: config new_scenario)")


def _point(steps: int, returns: np.ndarray) -> CurvePoint:
    return CurvePoint(int(steps), float(np.mean(returns)), float(np.std(returns)))


def random_arm(scenario: AnyScenario, config: RunConfig, seed: int) -> List[CurvePoint]:
    """Rounds of `eval_episodes` uniform-random episodes until the budget is spent."""
    spec = config.compare
    cost = spec.eval_episodes * scenario.episode_len
    points: List[CurvePoint] = []
    steps = 0
    while steps + cost <= spec.env_step_budget:
        returns = evaluate(
            RandomPolicy, lambda: make_env(scenario), spec.eval_episodes, derive_seed(seed, "round", len(points))
        )
        steps += cost
        points.append(_point(steps, returns))
    return points


def dt_arm(  # pylint: disable=too-many-locals
    model: DTModel, scenario: AnyScenario, config: RunConfig, seed: int, show_progress: bool = False
) -> List[CurvePoint]:
    """
    Few-shot fine-tune, then alternate evaluation with DT rollout rounds
    and short fine-tunes until the budget is spent.

    Raises:
        ValueError: the initial few-shot set alone exceeds the budget
    """
    spec = config.compare
    sid = scenario.scenario_id
    budget = spec.env_step_budget
    eval_cost = spec.eval_episodes * scenario.episode_len
    round_cost = spec.round_episodes * scenario.episode_len
    round_schedule = config.finetune.schedule.model_copy(update={"steps": spec.round_steps})
    prompt = scenario_prompt(scenario)

    few_shot = collect_few_shot(model, scenario, config, derive_seed(seed, "few-shot"), show_progress=show_progress)
    steps = few_shot.env_steps
    if steps + eval_cost > budget:
        raise ValueError(f"few-shot collection ({steps} steps) leaves no room for evaluation within {budget}")
    trajectories = list(few_shot.trajectories)
    finetune_on(model, scenario, trajectories, config, derive_seed(seed, "finetune", 0), show_progress=show_progress)

    points: List[CurvePoint] = []
    while True:
        returns = evaluate_policy(
            model,
            lambda: make_env(scenario),
            prompt,
            target_return(model.scenario(sid), config.evaluation),
            spec.eval_episodes,
            derive_seed(seed, "eval", len(points)),
            config.evaluation.workers,
        )
        steps += eval_cost
        points.append(_point(steps, returns))
        if steps + round_cost + eval_cost > budget:
            break
        extra = collect_few_shot(
            model,
            scenario,
            config,
            derive_seed(seed, "round-collect", len(points)),
            episodes=spec.round_episodes,
            source="dt",
        )
        steps += extra.env_steps
        trajectories += extra.trajectories
        flag_by_percentile(trajectories, config.finetune.expert_percentile)
        refresh_return_statistics(model, sid, trajectories)
        round_seed = derive_seed(seed, "finetune", len(points))
        finetune_on(model, scenario, trajectories, config, round_seed, round_schedule)
    return points


def ppo_arm(scenario: AnyScenario, config: RunConfig, seed: int, show_progress: bool = False) -> List[CurvePoint]:
    return ppo_train(make_env(scenario), config.ppo, config.compare.env_step_budget, seed, show_progress).curve


def run(ctx: CommandContext, args: argparse.Namespace) -> Path:
    config = ctx.config
    scenario = config.scenario(resolve_scenario_id(ctx, args.scenario))
    sid = scenario.scenario_id
    source = Path(args.checkpoint) if args.checkpoint else ctx.output("pretrained.ckpt")
    model = load_checkpoint(source).model
    if model.has_scenario(sid):
        raise ValueError(f"checkpoint {source} already has an adapter for {sid}")

    curves: Dict[str, List[CurvePoint]] = {}
    wall: Dict[str, float] = {}
    arms: List[Tuple[str, Callable[[], List[CurvePoint]]]] = [
        (
            "dt_ft",
            lambda: dt_arm(model, scenario, config, derive_seed(ctx.seed, "compare", "dt_ft"), ctx.show_progress),
        ),
        ("ppo", lambda: ppo_arm(scenario, config, derive_seed(ctx.seed, "compare", "ppo"), ctx.show_progress)),
        ("random", lambda: random_arm(scenario, config, derive_seed(ctx.seed, "compare", "random"))),
    ]
    for arm, play in arms:
        clock = Stopwatch(config.metrics.record_wall_clock)
        curves[arm] = play()
        wall[arm] = clock.elapsed()
        if not curves[arm]:
            raise ValueError(f"arm {arm} produced no curve points within {config.compare.env_step_budget} steps")
        logger.info("Arm %s: %d points, %d env steps charged", arm, len(curves[arm]), curves[arm][-1].env_steps)

    report = speedup_statistic(
        [p.env_steps for p in curves["ppo"]],
        [p.mean_return for p in curves["ppo"]],
        [p.env_steps for p in curves["dt_ft"]],
        [p.mean_return for p in curves["dt_ft"]],
        config.compare.convergence_fraction,
        config.compare.moving_average_window,
    )

    rows = [(arm, p.env_steps, p.mean_return, p.std_return) for arm, points in curves.items() for p in points]
    path = write_csv(ctx.output(f"compare_{sid}.csv"), COMPARE_COLUMNS, rows)
    summary = {
        "scenario_id": sid,
        "env_step_budget": config.compare.env_step_budget,
        "env_steps": {arm: points[-1].env_steps for arm, points in curves.items()},
        "wall_seconds": wall,
        **report.to_dict(),
    }
    ctx.output(f"compare_{sid}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return path
