"""
Stage logic of the collect -> pretrain -> lightweight -> finetune ->
evaluate -> compare workflow.

The CLI commands are thin wrappers around these functions; `compare`
reuses the few-shot helpers for its DT-FT arm. Every random stream is
derived from the run seed and a stage/scenario key, so each stage is a
pure function of (config, inputs, seed).
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import torch

from src.models import Prompt
from src.schemas import EvaluationSpec, IRSScenario, RunConfig, TrainingSchedule, UAVScenario
from src.service.dt.dt_model import DTModel, ScenarioInfo
from src.service.dt.inference import DTPolicy
from src.service.dt.training import EmptyDatasetError, attach_scenario, finetune, return_statistics
from src.service.dt.trajectory import Trajectory
from src.service.envs.base import build_prompt, make_env
from src.service.ppo.algorithm import CurvePoint
from src.service.ppo.algorithm import train as ppo_train
from src.service.ppo.collection import PPOActionPolicy, collect_dataset, expert_threshold
from src.service.rollouts import HeuristicPolicy, NoisyPolicy
from src.utils import derive_seed

logger = logging.getLogger(__name__)

AnyScenario = Union[IRSScenario, UAVScenario]

# Random-action rate of the exploratory episodes around the heuristic expert.
HEURISTIC_EXPLORATION = 0.3


@dataclass
class CollectOutcome:
    """
    Attributes:
        trajectories: Stored episodes of one scenario, flagged
        curve: PPO learning curve (empty for the heuristic expert)
        threshold: Expert cut-off applied
    """

    trajectories: List[Trajectory]
    curve: List[CurvePoint] = field(default_factory=list)
    threshold: Optional[float] = None


@dataclass
class FewShotSet:
    trajectories: List[Trajectory]
    env_steps: int


def scenario_prompt(scenario: AnyScenario, desired_return: float = 0.0) -> Prompt:
    return build_prompt(scenario, desired_return)


def prompt_dim_for(config: RunConfig) -> int:
    """Prompt width of the run's task family (identical for all its scenarios)."""
    dims = {scenario_prompt(s).dim for s in config.scenarios}
    if len(dims) != 1:
        raise ValueError(f"scenarios of one task produce prompts of widths {sorted(dims)}")
    return dims.pop()


def scenario_info(scenario: AnyScenario, trajectories: Sequence[Trajectory]) -> ScenarioInfo:
    env = make_env(scenario)
    return ScenarioInfo(env.state_dim, env.action_space, **return_statistics(trajectories))


def target_return(info: ScenarioInfo, spec: EvaluationSpec) -> float:
    """Evaluation target under the configured rule."""
    if spec.target_rule == "dataset_max":
        return info.max_return
    if spec.target_rule == "dataset_min":
        return info.min_return
    return float(spec.target_return)


def flag_by_percentile(trajectories: Sequence[Trajectory], percentile: float) -> float:
    """Flag trajectories at or above the `percentile` of their returns; returns the cut-off."""
    if not trajectories:
        return float("nan")
    threshold = float(np.percentile([t.total_return for t in trajectories], percentile))
    for trajectory in trajectories:
        trajectory.expert_flag = bool(trajectory.total_return >= threshold)
    return threshold


# ----------------------------------------------------------------------
# collect
# ----------------------------------------------------------------------


def collect_scenario(
    scenario: AnyScenario, config: RunConfig, seed: int, show_progress: bool = False
) -> CollectOutcome:
    """Train (or take) an expert for one scenario and roll out its dataset."""
    spec = config.collect
    sid = scenario.scenario_id
    env = make_env(scenario)
    if spec.expert_source == "ppo":
        result = ppo_train(env, config.ppo, spec.ppo_budget_steps, derive_seed(seed, "ppo", sid), show_progress)
        threshold = expert_threshold(result.episode_returns, spec.expert_percentile, spec.tail_episodes)
        expert = PPOActionPolicy(result.policy, env.action_space, greedy=True)
        explorer = PPOActionPolicy(result.policy, env.action_space, greedy=False)
        curve = result.curve
    else:
        threshold = None
        expert = HeuristicPolicy()
        explorer = NoisyPolicy(HeuristicPolicy(), HEURISTIC_EXPLORATION)
        curve = []
    trajectories = collect_dataset(
        expert,
        env,
        spec.episodes_per_scenario,
        threshold,
        derive_seed(seed, "collect", sid),
        explorer=explorer,
        explore_fraction=spec.sampled_fraction,
        random_fraction=spec.random_fraction,
        percentile=spec.expert_percentile,
    )
    return CollectOutcome(trajectories, curve, threshold)


# ----------------------------------------------------------------------
# pretrain
# ----------------------------------------------------------------------


def build_model(
    config: RunConfig,
    scenarios: Mapping[str, AnyScenario],
    trajectories: Sequence[Trajectory],
    seed: int,
) -> DTModel:
    """Fresh DT with one adapter per scenario that has trajectories."""
    if not trajectories:
        raise EmptyDatasetError("dataset holds no trajectories")
    torch.manual_seed(derive_seed(seed, "model-init"))
    model = DTModel(config.model, prompt_dim_for(config))
    for sid in sorted({t.scenario_id for t in trajectories}):
        own = [t for t in trajectories if t.scenario_id == sid]
        model.add_scenario(sid, scenario_info(scenarios[sid], own))
    return model


# ----------------------------------------------------------------------
# finetune
# ----------------------------------------------------------------------


def refresh_return_statistics(model: DTModel, scenario_id: str, trajectories: Sequence[Trajectory]) -> None:
    """Replace a registry entry's return scale and range with those of `trajectories`."""
    info = model.scenario(scenario_id)
    model.scenarios[scenario_id] = replace(info, **return_statistics(trajectories))


def _ensure_adapter(model: DTModel, scenario: AnyScenario) -> None:
    """Attach an adapter whose return statistics are borrowed from the nearest scenario."""
    sid = scenario.scenario_id
    if model.has_scenario(sid):
        return
    env = make_env(scenario)
    nearest = model.nearest_scenario(env.state_dim, env.action_space)
    borrowed = model.scenario(nearest) if nearest else ScenarioInfo(env.state_dim, env.action_space)
    info = ScenarioInfo(
        env.state_dim, env.action_space, borrowed.return_scale, borrowed.max_return, borrowed.min_return
    )
    attach_scenario(model, sid, info)


def collect_few_shot(  # pylint: disable=too-many-locals
    model: DTModel,
    scenario: AnyScenario,
    config: RunConfig,
    seed: int,
    episodes: Optional[int] = None,
    source: Optional[str] = None,
    show_progress: bool = False,
) -> FewShotSet:
    """
    Few-shot episodes in `scenario`; attaches the scenario's adapter.

    ppo   : a PPO policy trained from scratch for `ppo_budget_steps`, half
            greedy and half sampled episodes
    dt    : the current model acting in the new scenario
    mixed : half of each

    Returned env_steps charges PPO training plus every collected step.
    """
    spec = config.finetune
    sid = scenario.scenario_id
    episodes = spec.episodes if episodes is None else episodes
    source = spec.sample_source if source is None else source
    n_ppo = {"ppo": episodes, "dt": 0, "mixed": (episodes + 1) // 2}[source]
    n_dt = episodes - n_ppo
    env = make_env(scenario)
    trajectories: List[Trajectory] = []
    env_steps = 0

    if n_ppo:
        ppo_seed = derive_seed(seed, "few-shot-ppo", sid)
        result = ppo_train(env, config.ppo, spec.ppo_budget_steps, ppo_seed, show_progress)
        env_steps += result.env_steps
        trajectories += collect_dataset(
            PPOActionPolicy(result.policy, env.action_space, greedy=True),
            env,
            n_ppo,
            float("-inf"),
            derive_seed(seed, "few-shot-ppo-episodes", sid),
            explorer=PPOActionPolicy(result.policy, env.action_space, greedy=False),
            explore_fraction=0.5,
        )
    if n_dt:
        _ensure_adapter(model, scenario)
        policy = DTPolicy(model, scenario_prompt(scenario), model.scenario(sid).max_return)
        trajectories += collect_dataset(policy, env, n_dt, float("-inf"), derive_seed(seed, "few-shot-dt", sid))

    env_steps += sum(t.length for t in trajectories)
    flag_by_percentile(trajectories, spec.expert_percentile)
    if model.has_scenario(sid):
        refresh_return_statistics(model, sid, trajectories)
    else:
        attach_scenario(model, sid, scenario_info(scenario, trajectories))
    logger.info(
        "Few-shot set for %s: %d episodes (%d ppo, %d dt), %d env steps",
        sid,
        len(trajectories),
        n_ppo,
        n_dt,
        env_steps,
    )
    return FewShotSet(trajectories, env_steps)


def finetune_on(
    model: DTModel,
    scenario: AnyScenario,
    trajectories: Sequence[Trajectory],
    config: RunConfig,
    seed: int,
    schedule: Optional[TrainingSchedule] = None,
    show_progress: bool = False,
) -> List[float]:
    spec = config.finetune
    return finetune(
        model,
        scenario.scenario_id,
        trajectories,
        scenario_prompt(scenario),
        spec.freeze,
        schedule or spec.schedule,
        seed,
        spec.non_expert_weight,
        show_progress=show_progress,
    )


# ----------------------------------------------------------------------
# compare
# ----------------------------------------------------------------------


def summarize_returns(returns: Sequence[float]) -> Dict[str, float]:
    arr = np.asarray(returns, dtype=np.float64)
    return {
        "episodes": int(arr.size),
        "mean_return": float(arr.mean()) if arr.size else math.nan,
        "std_return": float(arr.std()) if arr.size else math.nan,
    }
