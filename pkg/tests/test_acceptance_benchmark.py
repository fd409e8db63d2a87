"""
Desk-scale training runs: behaviour cloning, return conditioning,
distillation, PPO against random and the transfer speedup.

These take minutes each and are deselected by default; run them with
`pytest -m benchmark`.
"""

# pylint: disable=missing-function-docstring,redefined-outer-name,unused-argument

import json

import numpy as np
import pytest

from src.configs import CONFIG_DIR
from src.main import main
from src.schemas import RunConfig
from src.service.dt.inference import evaluate_policy
from src.service.dt.lightweight import distill, init_student_from_teacher
from src.service.dt.training import pretrain
from src.service.envs.base import make_env
from src.service.metrics import one_sided_test
from src.service.pipeline import build_model, scenario_prompt
from src.service.ppo.algorithm import train as ppo_train
from src.service.ppo.collection import PPOActionPolicy, collect_dataset
from src.service.rollouts import HeuristicPolicy, RandomPolicy, evaluate
from src.service.transformer import count_parameters

pytestmark = pytest.mark.benchmark

EVAL_EPISODES = 100


@pytest.fixture(scope="module")
def irs_config() -> RunConfig:
    return RunConfig.from_file(CONFIG_DIR / "irs_desk.json")


def _expert_clone(config, scenario_id, episodes, seed, random_fraction=0.0):
    """DT pretrained on heuristic-expert (plus optionally random) episodes of one scenario."""
    scenario = config.scenario(scenario_id)
    trajectories = collect_dataset(
        HeuristicPolicy(), make_env(scenario), episodes, None, seed, random_fraction=random_fraction
    )
    model = build_model(config, {scenario_id: scenario}, trajectories, seed)
    prompts = {scenario_id: scenario_prompt(scenario)}
    pretrain(model, trajectories, prompts, config.pretrain, seed)
    return model, trajectories, prompts


def _dt_returns(model, scenario, target, seed):
    return evaluate_policy(
        model, lambda: make_env(scenario), scenario_prompt(scenario), target, EVAL_EPISODES, seed
    )


@pytest.fixture(scope="module")
def irs_n16_clone(irs_config):
    return _expert_clone(irs_config, "irs_n16", 500, seed=21)


# ---------------------------------------------------------------------------
# Offline training
# ---------------------------------------------------------------------------


def test_cloned_model_reaches_the_expert_return(irs_config, irs_n16_clone):
    model, _, _ = irs_n16_clone
    scenario = irs_config.scenario("irs_n16")
    expert = evaluate(HeuristicPolicy, lambda: make_env(scenario), EVAL_EPISODES, seed=99)
    cloned = _dt_returns(model, scenario, model.scenario("irs_n16").max_return, seed=99)
    assert cloned.mean() >= 0.95 * expert.mean()


def test_higher_target_return_yields_higher_return(irs_config):
    model, _, _ = _expert_clone(irs_config, "irs_n8", 500, seed=22, random_fraction=0.5)
    scenario = irs_config.scenario("irs_n8")
    info = model.scenario("irs_n8")
    high = _dt_returns(model, scenario, info.max_return, seed=7)
    low = _dt_returns(model, scenario, info.min_return, seed=7)
    result = one_sided_test(high, low)
    assert result.margin > 0
    assert result.pvalue < 0.05


def test_distilled_student_keeps_the_teacher_return(irs_config, irs_n16_clone):
    teacher, trajectories, prompts = irs_n16_clone
    spec = irs_config.lightweight
    student_config = irs_config.model.transformer.derive(
        attention_variant=spec.attention_variant, window=spec.window
    )
    assert count_parameters(student_config) <= 0.7 * count_parameters(irs_config.model.transformer)

    student = init_student_from_teacher(teacher, student_config)
    distill(student, teacher, trajectories, prompts, spec.beta, spec.schedule, seed=23)
    scenario = irs_config.scenario("irs_n16")
    target = teacher.scenario("irs_n16").max_return
    teacher_returns = _dt_returns(teacher, scenario, target, seed=8)
    student_returns = _dt_returns(student, scenario, target, seed=8)
    assert student_returns.mean() >= 0.9 * teacher_returns.mean()


# ---------------------------------------------------------------------------
# Online baselines
# ---------------------------------------------------------------------------


def test_ppo_beats_random_phases(irs_config):
    scenario = irs_config.scenario("irs_n8")
    env = make_env(scenario)
    result = ppo_train(env, irs_config.ppo, irs_config.collect.ppo_budget_steps, seed=24)
    trained = evaluate(
        lambda: PPOActionPolicy(result.policy, env.action_space, greedy=True),
        lambda: make_env(scenario),
        EVAL_EPISODES,
        seed=9,
    )
    random = evaluate(RandomPolicy, lambda: make_env(scenario), EVAL_EPISODES, seed=9)
    assert np.mean(trained) >= 1.5 * np.mean(random)


# ---------------------------------------------------------------------------
# Transfer to an unseen scenario
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("config_name", ["irs_desk.json", "uav_desk.json"])
def test_finetuned_dt_converges_faster_than_ppo(tmp_path, restore_root_logging, config_name):
    config_path = CONFIG_DIR / config_name
    config = RunConfig.from_file(config_path)
    for command in ("collect", "pretrain", "compare"):
        assert main([command, "--config", str(config_path), "--out", str(tmp_path), "--quiet"]) == 0

    summary_path = tmp_path / f"compare_{config.new_scenario}_summary.json"
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    assert summary["speedup"] >= 2.0
    if config.task == "irs":
        assert summary["dt_plateau"] >= summary["ppo_plateau"]
