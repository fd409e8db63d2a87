"""
Tests for supervised DT training: loss gradients, memorisation, frozen
fine-tuning and input validation.
"""

# pylint: disable=missing-function-docstring,redefined-outer-name,unused-argument

import math

import pytest
import torch

from src import numerics
from src.models import Prompt
from src.schemas import FreezeSpec, TrainingSchedule, UnknownScenarioError
from src.service.dt import training
from src.service.dt.dt_model import DTModel, ScenarioInfo
from src.service.dt.tokenizer import collate, tokenize
from src.service.dt.training import (
    EmptyDatasetError,
    FreezeViolationError,
    attach_scenario,
    finetune,
    prepare_examples,
    pretrain,
    resolve_freeze_groups,
    return_statistics,
    training_loss,
)
from tests.conftest import make_model, make_trajectory

PROMPT = Prompt(0.0, (1.0,), (0.5,))


def _snapshot(model, prefix):
    return {n: p.detach().clone() for n, p in model.named_parameters() if n.startswith(prefix)}


def _unchanged(model, snapshot):
    params = dict(model.named_parameters())
    return all(torch.equal(params[n].detach(), value) for n, value in snapshot.items())


@pytest.fixture()
def two_scenario_model(tiny_model_settings, toy_space):
    torch.manual_seed(0)
    return make_model(tiny_model_settings, toy_space, scenario_ids=("toy", "other"))


# ---------------------------------------------------------------------------
# Loss and examples
# ---------------------------------------------------------------------------


def test_prepare_examples_uses_hindsight_prompts_and_weights():
    expert = make_trajectory(rewards=[1.0, 2.0, 3.0], length=3)
    weak = make_trajectory(rewards=[0.5, 0.5, 0.5], length=3, expert_flag=False)
    examples = prepare_examples([expert, weak], {"toy": PROMPT}, non_expert_weight=0.25)
    assert list(examples) == ["toy"]
    assert [e.prompt.desired_return for e in examples["toy"]] == [6.0, 1.5]
    assert [e.weight for e in examples["toy"]] == [1.0, 0.25]
    assert examples["toy"][0].prompt.constraints == PROMPT.constraints


def test_prepare_examples_rejects_unknown_scenario():
    with pytest.raises(UnknownScenarioError):
        prepare_examples([make_trajectory(scenario_id="elsewhere")], {"toy": PROMPT})


def test_return_statistics():
    losing, winning = make_trajectory(rewards=[-4.0] * 3, length=3), make_trajectory(rewards=[1.0] * 3, length=3)
    stats = return_statistics([losing, winning])
    assert stats == {"return_scale": 12.0, "max_return": 3.0, "min_return": -12.0}
    assert return_statistics([make_trajectory(rewards=[0.25, 0.25], length=2)])["return_scale"] == 1.0
    with pytest.raises(EmptyDatasetError):
        return_statistics([])


def test_full_dt_loss_gradients_match_finite_differences(tiny_model_settings, toy_space):
    torch.manual_seed(3)
    model = make_model(tiny_model_settings, toy_space)
    trajectory = make_trajectory(length=5, action_rows=[[i % 3, i % 2] for i in range(5)], seed=4)
    batch = collate([tokenize(trajectory, PROMPT.with_return(5.0), 4), tokenize(trajectory, PROMPT, 4, end=2)])
    params = dict(model.named_parameters())
    error = numerics.grad_check(lambda: training_loss(model, [batch]), params, max_entries=6, seed=2)
    assert error <= 1e-4


def test_loss_averages_over_real_slots_only(tiny_model_settings, toy_space):
    model = make_model(tiny_model_settings, toy_space)
    trajectory = make_trajectory(length=6, action_rows=[[i % 3, 1.0] for i in range(6)])
    short, long = tokenize(trajectory, PROMPT, 4, end=2), tokenize(trajectory, PROMPT, 4)
    with torch.no_grad():
        short_loss = training_loss(model, [collate([short])]).item()
        long_loss = training_loss(model, [collate([long])]).item()
        mixed = training_loss(model, [collate([short, long])]).item()
    # the short window is left-padded by two steps inside the mixed batch
    assert mixed == pytest.approx((2 * short_loss + 4 * long_loss) / 6, rel=1e-9)


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------


def test_memorises_a_constant_action(tiny_model_settings, toy_space):
    torch.manual_seed(0)
    model = make_model(tiny_model_settings, toy_space)
    trajectories = [make_trajectory(length=6, action_rows=[[2.0, 1.0]] * 6, seed=s) for s in range(4)]
    schedule = TrainingSchedule(steps=400, batch_size=8, learning_rate=1e-2, weight_decay=0.0, log_every=400)
    curve = pretrain(model, trajectories, {"toy": PROMPT}, schedule, seed=0)
    assert len(curve) == 400
    assert all(math.isfinite(v) for v in curve)
    assert curve[-1] < 0.1 * curve[0]

    batch = collate([tokenize(trajectories[0], PROMPT.with_return(6.0), 4)])
    with torch.no_grad():
        decoded = model.adapter("toy").codec.decode(model(batch)[0])
    assert decoded.tolist() == [[2.0, 1.0]] * 4


def test_pretraining_is_deterministic(tiny_model_settings, toy_space):
    schedule = TrainingSchedule(steps=5, batch_size=4, log_every=5)
    curves = []
    for _ in range(2):
        torch.manual_seed(1)
        model = make_model(tiny_model_settings, toy_space)
        trajectories = [make_trajectory(), make_trajectory(seed=1)]
        curves.append(pretrain(model, trajectories, {"toy": PROMPT}, schedule, seed=7))
    assert curves[0] == curves[1]


def test_pretraining_updates_adapters_of_different_widths(tiny_model_settings, toy_space):
    torch.manual_seed(2)
    model = DTModel(tiny_model_settings, prompt_dim=3)
    model.add_scenario("narrow", ScenarioInfo(3, toy_space, 10.0, 10.0, 0.0))
    model.add_scenario("wide", ScenarioInfo(5, toy_space, 10.0, 10.0, 0.0))
    before = _snapshot(model, "adapters.")
    trajectories = [
        make_trajectory(scenario_id="narrow", state_dim=3),
        make_trajectory(scenario_id="wide", state_dim=5, seed=1),
    ]
    schedule = TrainingSchedule(steps=5, batch_size=4, learning_rate=1e-2, log_every=5)
    pretrain(model, trajectories, {"narrow": PROMPT, "wide": PROMPT}, schedule, seed=3)
    assert not _unchanged(model, {n: v for n, v in before.items() if n.startswith("adapters.narrow.")})
    assert not _unchanged(model, {n: v for n, v in before.items() if n.startswith("adapters.wide.")})


def test_pretrain_rejects_empty_and_mismatched_sets(two_scenario_model):
    schedule = TrainingSchedule(steps=1, batch_size=2)
    with pytest.raises(EmptyDatasetError):
        pretrain(two_scenario_model, [], {"toy": PROMPT}, schedule, seed=0)
    with pytest.raises(numerics.ShapeMismatchError):
        pretrain(two_scenario_model, [make_trajectory(state_dim=4)], {"toy": PROMPT}, schedule, seed=0)
    with pytest.raises(numerics.ShapeMismatchError):
        pretrain(two_scenario_model, [make_trajectory(action_rows=[[0.0]] * 6)], {"toy": PROMPT}, schedule, seed=0)


# ---------------------------------------------------------------------------
# Fine-tuning
# ---------------------------------------------------------------------------


def test_attach_scenario_warm_starts_from_the_nearest_adapter(two_scenario_model, toy_space):
    attach_scenario(two_scenario_model, "new", ScenarioInfo(3, toy_space, 10.0))
    source = two_scenario_model.adapter("other").state_dict()
    for name, tensor in two_scenario_model.adapter("new").state_dict().items():
        assert torch.equal(tensor, source[name])


def test_finetune_keeps_frozen_trunk_bit_identical(two_scenario_model):
    trunk = _snapshot(two_scenario_model, "trunk.")
    other = _snapshot(two_scenario_model, "adapters.other.")
    own = _snapshot(two_scenario_model, "adapters.toy.")
    schedule = TrainingSchedule(steps=5, batch_size=4, learning_rate=1e-2, log_every=5)
    curve = finetune(
        two_scenario_model,
        "toy",
        [make_trajectory(), make_trajectory(seed=1, expert_flag=False)],
        PROMPT,
        FreezeSpec(),
        schedule,
        seed=0,
        non_expert_weight=0.5,
    )
    assert len(curve) == 5
    assert _unchanged(two_scenario_model, trunk)
    assert _unchanged(two_scenario_model, other)
    assert not _unchanged(two_scenario_model, own)
    # requires_grad flags are restored afterwards
    assert all(p.requires_grad for p in two_scenario_model.parameters())


def test_finetune_with_everything_frozen_only_measures_the_loss(two_scenario_model):
    groups = sorted({name.split(".")[0] for name, _ in two_scenario_model.named_parameters()})
    assert "adapters" in groups and "trunk" in groups
    everything = _snapshot(two_scenario_model, "")
    schedule = TrainingSchedule(steps=3, batch_size=4, learning_rate=1e-2, log_every=3)
    curve = finetune(
        two_scenario_model,
        "toy",
        [make_trajectory(), make_trajectory(seed=1)],
        PROMPT,
        FreezeSpec(groups=groups),
        schedule,
        seed=0,
        non_expert_weight=1.0,
    )
    assert len(curve) == 3
    assert all(math.isfinite(v) and v > 0 for v in curve)
    assert _unchanged(two_scenario_model, everything)
    assert all(p.requires_grad for p in two_scenario_model.parameters())


def test_finetune_detects_a_changed_frozen_tensor(two_scenario_model, monkeypatch):
    def tampering_optimise(model, *args, **kwargs):
        with torch.no_grad():
            model.trunk.blocks[0].ffn.expand.bias.add_(1.0)
        return []

    monkeypatch.setattr(training, "optimise", tampering_optimise)
    with pytest.raises(FreezeViolationError):
        finetune(
            two_scenario_model, "toy", [make_trajectory()], PROMPT, FreezeSpec(), TrainingSchedule(steps=1), 0, 1.0
        )


def test_finetune_rejects_empty_and_foreign_sets(two_scenario_model):
    schedule = TrainingSchedule(steps=1, batch_size=2)
    with pytest.raises(EmptyDatasetError):
        finetune(two_scenario_model, "toy", [], PROMPT, FreezeSpec(), schedule, 0, 1.0)
    with pytest.raises(ValueError):
        finetune(
            two_scenario_model, "toy", [make_trajectory(scenario_id="other")], PROMPT, FreezeSpec(), schedule, 0, 1.0
        )


def test_freeze_groups_resolve_by_prefix(two_scenario_model):
    names = resolve_freeze_groups(two_scenario_model, ["trunk.blocks.0", "embed_return"])
    assert names and all(n.startswith("trunk.blocks.0.") or n.startswith("embed_return.") for n in names)
    assert "embed_return.weight" in names
    with pytest.raises(ValueError):
        resolve_freeze_groups(two_scenario_model, ["decoder"])
