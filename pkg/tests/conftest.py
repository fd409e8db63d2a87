"""
Shared pytest fixtures.

Everything runs on CPU in float64 at toy sizes: a 2-block d=8 trunk, a
4-element IRS surface and 2 UAVs serving 4 users, all with 10-slot
episodes. The CLI fixtures write a run config into `tmp_path`, so no test
reads or writes `resources/`.
"""

# pylint: disable=wrong-import-position,missing-function-docstring
# pylint: disable=redefined-outer-name,unused-argument

import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

# Make `src` importable as a top-level package, mirroring run_pipeline.py.
PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from src import numerics  # noqa: E402,F401  (float64 default dtype)
from src.models import ActionSpace, DiscretePart  # noqa: E402
from src.schemas import DTModelSettings, IRSScenario, TransformerConfig, UAVScenario  # noqa: E402
from src.service.dt.dt_model import DTModel, ScenarioInfo  # noqa: E402
from src.service.dt.trajectory import Trajectory  # noqa: E402


@pytest.fixture()
def tiny_transformer_config() -> TransformerConfig:
    return TransformerConfig(
        num_blocks=2, model_dim=8, num_heads=2, ffn_dim=16, dropout_rate=0.0, window=4, max_sequence_len=16
    )


@pytest.fixture()
def tiny_model_settings(tiny_transformer_config) -> DTModelSettings:
    return DTModelSettings(transformer=tiny_transformer_config, context_len=4, max_timestep=64)


@pytest.fixture()
def irs_scenario() -> IRSScenario:
    return IRSScenario(scenario_id="irs_n4", num_elements=4, episode_len=10)


@pytest.fixture()
def uav_scenario() -> UAVScenario:
    return UAVScenario(scenario_id="uav_k2", num_uavs=2, num_users=4, episode_len=10)


@pytest.fixture()
def toy_space() -> ActionSpace:
    """Two discrete parts (3 and 2 values)."""
    return ActionSpace((DiscretePart("a", 3), DiscretePart("b", 2)))


@pytest.fixture()
def tmp_run_dir(tmp_path) -> Path:
    out = tmp_path / "run"
    out.mkdir()
    return out


@pytest.fixture()
def restore_root_logging():
    """`main()` reconfigures the root logger; put the runner's handlers back afterwards."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    for handler in root.handlers:
        if handler not in handlers:
            handler.close()
    root.handlers[:] = handlers
    root.setLevel(level)


def make_trajectory(
    *,
    scenario_id: str = "toy",
    length: int = 6,
    state_dim: int = 3,
    action_rows: Optional[Sequence[Sequence[float]]] = None,
    rewards: Optional[Sequence[float]] = None,
    expert_flag: bool = True,
    seed: int = 0,
) -> Trajectory:
    """Trajectory with random states; actions default to (0, 1) rows, rewards to 1.0."""
    rng = np.random.default_rng(seed)
    actions = np.asarray(action_rows if action_rows is not None else [[0.0, 1.0]] * length, dtype=np.float64)
    return Trajectory(
        scenario_id=scenario_id,
        states=rng.uniform(-1.0, 1.0, size=(length, state_dim)),
        actions=actions,
        rewards=np.asarray(rewards if rewards is not None else [1.0] * length, dtype=np.float64),
        expert_flag=expert_flag,
    )


def make_model(
    settings: DTModelSettings,
    space: ActionSpace,
    *,
    scenario_ids: Sequence[str] = ("toy",),
    state_dim: int = 3,
    prompt_dim: int = 3,
    return_scale: float = 10.0,
) -> DTModel:
    """DTModel with one adapter per id, all sharing `space` and `state_dim`."""
    model = DTModel(settings, prompt_dim)
    for sid in scenario_ids:
        model.add_scenario(sid, ScenarioInfo(state_dim, space, return_scale, return_scale, 0.0))
    model.eval()
    return model


def tiny_run_config(task: str = "irs", **overrides: Any) -> Dict[str, Any]:
    """Run config dict small enough for an end-to-end CLI pass in seconds."""
    if task == "irs":
        scenarios = [
            {"task": "irs", "scenario_id": "irs_a", "num_elements": 4, "episode_len": 10},
            {"task": "irs", "scenario_id": "irs_b", "num_elements": 4, "pathloss_direct": 3.6, "episode_len": 10},
            {"task": "irs", "scenario_id": "irs_c", "num_elements": 6, "episode_len": 10},
        ]
        pretrain, new = ["irs_a", "irs_b"], "irs_c"
    else:
        scenarios = [
            {"task": "uav", "scenario_id": "uav_a", "num_uavs": 1, "num_users": 3, "episode_len": 10},
            {"task": "uav", "scenario_id": "uav_b", "num_uavs": 2, "num_users": 3, "episode_len": 10},
        ]
        pretrain, new = ["uav_a"], "uav_b"
    config: Dict[str, Any] = {
        "task": task,
        "seed": 5,
        "scenarios": scenarios,
        "pretrain_scenarios": pretrain,
        "new_scenario": new,
        "model": {
            "transformer": {
                "num_blocks": 1,
                "model_dim": 8,
                "num_heads": 2,
                "ffn_dim": 16,
                "dropout_rate": 0.0,
                "window": 4,
                "max_sequence_len": 16,
            },
            "context_len": 4,
            "max_timestep": 64,
        },
        "ppo": {"rollout_batch": 20, "minibatch": 10, "epochs": 1, "hidden_dim": 8},
        "collect": {"episodes_per_scenario": 6, "expert_source": "heuristic", "sampled_fraction": 0.3},
        "pretrain": {"steps": 5, "batch_size": 8, "log_every": 5},
        "lightweight": {"enabled": True, "window": 4, "schedule": {"steps": 3, "batch_size": 8}},
        "finetune": {
            "episodes": 4,
            "sample_source": "ppo",
            "ppo_budget_steps": 20,
            "schedule": {"steps": 5, "batch_size": 8},
        },
        "evaluation": {"episodes": 3},
        "compare": {"env_step_budget": 120, "eval_episodes": 2, "round_episodes": 1, "round_steps": 2},
    }
    config.update(overrides)
    return config


def write_config(tmp_path: Path, data: Dict[str, Any], name: str = "config.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(data, indent=2), encoding="utf-8")
    return path
