"""
Dataset buffer persistence.

A dataset file is line-delimited JSON:

    line 1     header  {"format_version", "task", "scenarios": [...], "num_records"}
    line 2..   one record per trajectory
               {"scenario_id", "expert_flag", "length", "states", "actions", "rewards"}

Floats are written with their shortest round-trip repr, so save -> load is
lossless. Returns-to-go are never stored; `Trajectory` recomputes them.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Union

from pydantic import TypeAdapter, ValidationError

from src.configs import DATASET_FORMAT_VERSION
from src.schemas import IRSScenario, Scenario, UAVScenario
from src.service.dt.trajectory import Trajectory

logger = logging.getLogger(__name__)

_SCENARIO_ADAPTER = TypeAdapter(Scenario)


class DatasetFormatError(ValueError):
    """The file is not a readable dataset."""


class DatasetVersionError(DatasetFormatError):
    """The header carries a format version this code does not read."""


class CorruptRecordError(DatasetFormatError):
    """A record is missing, truncated or inconsistent."""

    def __init__(self, record_index: int, reason: str):
        super().__init__(f"record {record_index}: {reason}")
        self.record_index = record_index
        self.reason = reason


@dataclass
class DatasetFile:
    """
    In-memory dataset.

    Attributes:
        task: irs | uav
        scenarios: Registry of scenario specs keyed by id
        trajectories: Records in file order
    """

    task: str
    scenarios: Dict[str, Union[IRSScenario, UAVScenario]]
    trajectories: List[Trajectory]

    def by_scenario(self, scenario_id: str) -> List[Trajectory]:
        return [t for t in self.trajectories if t.scenario_id == scenario_id]


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=True)


def save_dataset(
    path: Union[str, Path],
    trajectories: Sequence[Trajectory],
    scenarios: Sequence[Union[IRSScenario, UAVScenario]],
    task: str,
) -> Path:
    """
    Write a dataset file.

    Args:
        path (Union[str, Path]): Destination file
        trajectories (Sequence[Trajectory]): Records to store
        scenarios (Sequence[Scenario]): Registry; must cover every record
        task (str): Task family of the run

    Returns:
        Path: The written path

    Raises:
        DatasetFormatError: A record references an unregistered scenario
    """
    registry = {s.scenario_id: s for s in scenarios}
    for index, trajectory in enumerate(trajectories):
        if trajectory.scenario_id not in registry:
            raise DatasetFormatError(f"record {index} references unregistered scenario {trajectory.scenario_id}")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": DATASET_FORMAT_VERSION,
        "task": task,
        "scenarios": [s.model_dump() for s in scenarios],
        "num_records": len(trajectories),
    }
    with path.open("w", encoding="utf-8") as handle:
        handle.write(_dumps(header) + "\n")
        for trajectory in trajectories:
            record = {
                "scenario_id": trajectory.scenario_id,
                "expert_flag": bool(trajectory.expert_flag),
                "length": trajectory.length,
                "states": trajectory.states.tolist(),
                "actions": trajectory.actions.tolist(),
                "rewards": trajectory.rewards.tolist(),
            }
            handle.write(_dumps(record) + "\n")
    logger.info("Saved %d trajectories (%d scenarios) to %s", len(trajectories), len(registry), path)
    return path


def _parse_header(line: str) -> dict:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"unreadable header: {exc}") from exc
    if not isinstance(header, dict) or "format_version" not in header:
        raise DatasetFormatError("header has no format_version")
    if header["format_version"] != DATASET_FORMAT_VERSION:
        raise DatasetVersionError(
            f"dataset format version {header['format_version']} is not supported (expected {DATASET_FORMAT_VERSION})"
        )
    for key in ("task", "scenarios", "num_records"):
        if key not in header:
            raise DatasetFormatError(f"header is missing {key!r}")
    return header


def _parse_record(index: int, line: str, registry: Dict[str, object]) -> Trajectory:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorruptRecordError(index, f"unreadable JSON ({exc.msg})") from exc
    try:
        scenario_id = record["scenario_id"]
        if scenario_id not in registry:
            raise CorruptRecordError(index, f"scenario {scenario_id!r} is not in the registry")
        trajectory = Trajectory(
            scenario_id=scenario_id,
            states=record["states"],
            actions=record["actions"],
            rewards=record["rewards"],
            expert_flag=bool(record["expert_flag"]),
        )
    except CorruptRecordError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptRecordError(index, f"{type(exc).__name__}: {exc}") from exc
    if trajectory.length != record.get("length", trajectory.length):
        raise CorruptRecordError(index, f"declares {record['length']} steps, holds {trajectory.length}")
    return trajectory


def load_dataset(path: Union[str, Path]) -> DatasetFile:
    """
    Read and validate a dataset file.

    Args:
        path (Union[str, Path]): Dataset file

    Returns:
        DatasetFile: Registry and trajectories

    Raises:
        FileNotFoundError: No such file
        DatasetVersionError: Unknown format version
        DatasetFormatError: Bad header or scenario registry
        CorruptRecordError: A record is unreadable or missing (carries its index)
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        lines = handle.read().split("\n")
    if not lines or not lines[0].strip():
        raise DatasetFormatError(f"{path} is empty")
    header = _parse_header(lines[0])
    try:
        scenarios = [_SCENARIO_ADAPTER.validate_python(s) for s in header["scenarios"]]
    except ValidationError as exc:
        raise DatasetFormatError(f"invalid scenario registry: {exc}") from exc
    registry = {s.scenario_id: s for s in scenarios}

    body = lines[1:]
    if body and body[-1] == "":
        body = body[:-1]
    expected = int(header["num_records"])
    trajectories = [_parse_record(index, line, registry) for index, line in enumerate(body[:expected])]
    if len(trajectories) < expected:
        raise CorruptRecordError(len(trajectories), f"missing; header declares {expected} records")
    if len(body) > expected:
        raise CorruptRecordError(expected, f"unexpected extra record beyond the declared {expected}")

    logger.info("Loaded %d trajectories (%d scenarios) from %s", len(trajectories), len(registry), path)
    return DatasetFile(header["task"], registry, trajectories)
