"""
Metric tables and CSV emission.

All CSVs are written with a fixed header, '\n' line endings and floats
formatted by `repr`, so reruns with the same seed produce identical bytes.
"""

import csv
import logging
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

logger = logging.getLogger(__name__)


class MetricsOrderError(ValueError):
    """A row's step goes backwards within its (phase, scenario) series."""


@dataclass(frozen=True)
class MetricsRow:
    phase: str
    scenario_id: str
    step: int
    mean_return: float
    std_return: float
    wall_seconds: float = 0.0


METRICS_COLUMNS = [f.name for f in fields(MetricsRow)]


class MetricsTable:
    """Append-only rows; steps are non-decreasing per (phase, scenario_id)."""

    def __init__(self):
        self._rows: List[MetricsRow] = []
        self._last_step: Dict[Tuple[str, str], int] = {}

    def __len__(self) -> int:
        return len(self._rows)

    @property
    def rows(self) -> Tuple[MetricsRow, ...]:
        return tuple(self._rows)

    def append(self, row: MetricsRow) -> None:
        key = (row.phase, row.scenario_id)
        last = self._last_step.get(key)
        if last is not None and row.step < last:
            raise MetricsOrderError(f"{key}: step {row.step} after {last}")
        self._last_step[key] = row.step
        self._rows.append(row)

    def add(  # pylint: disable=too-many-arguments
        self,
        phase: str,
        scenario_id: str,
        step: int,
        mean_return: float,
        std_return: float = 0.0,
        wall_seconds: float = 0.0,
    ) -> MetricsRow:
        row = MetricsRow(phase, scenario_id, int(step), float(mean_return), float(std_return), float(wall_seconds))
        self.append(row)
        return row

    def extend(self, rows: Iterable[MetricsRow]) -> None:
        for row in rows:
            self.append(row)

    def series(self, phase: str, scenario_id: str) -> List[MetricsRow]:
        return [r for r in self._rows if r.phase == phase and r.scenario_id == scenario_id]

    def write_csv(self, path: Union[str, Path]) -> Path:
        return write_csv(path, METRICS_COLUMNS, [astuple(r) for r in self._rows])


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Union[str, Path], columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """
    Write `rows` under a fixed header.

    Raises:
        ValueError: a row's width differs from the header
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"row {count} has {len(row)} fields, header has {len(columns)}")
            writer.writerow([_format(v) for v in row])
            count += 1
    logger.info("Wrote %d rows to %s", count, path)
    return path


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))
