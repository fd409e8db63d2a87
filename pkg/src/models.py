"""
Domain value types shared by environments, policies and persistence.

An action is a `HybridAction` (discrete indices + bounded continuous
values) described by an `ActionSpace`. Datasets and the DT store actions
as flat float rows: discrete indices first, continuous values after.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np


class InvalidActionError(ValueError):
    """An action does not fit its action space."""


@dataclass(frozen=True)
class DiscretePart:
    """One categorical action component with `cardinality` legal values."""

    name: str
    cardinality: int


@dataclass(frozen=True)
class ContinuousPart:
    """
    One bounded scalar action component.

    Attributes:
        name: Part name
        low: Inclusive lower bound
        high: Inclusive upper bound
        grid: Native grid the categorical PPO actor chooses from
    """

    name: str
    low: float
    high: float
    grid: Tuple[float, ...] = ()


@dataclass(frozen=True)
class HybridAction:
    """Concrete action: category indices plus continuous values."""

    discrete: Tuple[int, ...]
    continuous: Tuple[float, ...] = ()


@dataclass(frozen=True)
class ActionSpace:
    """Ordered discrete parts followed by ordered continuous parts."""

    discrete: Tuple[DiscretePart, ...]
    continuous: Tuple[ContinuousPart, ...] = ()

    @property
    def num_parts(self) -> int:
        return len(self.discrete) + len(self.continuous)

    @property
    def grid_sizes(self) -> List[int]:
        """Per-part category counts for a factorized categorical policy."""
        return [p.cardinality for p in self.discrete] + [len(p.grid) for p in self.continuous]

    def validate(self, action: HybridAction) -> HybridAction:
        """Return `action` unchanged or raise InvalidActionError."""
        if len(action.discrete) != len(self.discrete) or len(action.continuous) != len(self.continuous):
            raise InvalidActionError(
                f"expected {len(self.discrete)} discrete / {len(self.continuous)} continuous parts, "
                f"got {len(action.discrete)} / {len(action.continuous)}"
            )
        for part, index in zip(self.discrete, action.discrete):
            if not 0 <= int(index) < part.cardinality:
                raise InvalidActionError(f"{part.name} index {index} outside [0, {part.cardinality})")
        for part, value in zip(self.continuous, action.continuous):
            if not part.low <= float(value) <= part.high:
                raise InvalidActionError(f"{part.name} value {value} outside [{part.low}, {part.high}]")
        return action

    def flatten(self, action: HybridAction) -> np.ndarray:
        """Flat float row: discrete indices then continuous values."""
        self.validate(action)
        return np.asarray(
            [float(i) for i in action.discrete] + [float(v) for v in action.continuous], dtype=np.float64
        )

    def unflatten(self, row: Sequence[float]) -> HybridAction:
        """Inverse of `flatten`; discrete entries are rounded to the nearest index."""
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (self.num_parts,):
            raise InvalidActionError(f"action row must have {self.num_parts} entries, got shape {row.shape}")
        n_disc = len(self.discrete)
        discrete = tuple(int(round(v)) for v in row[:n_disc])
        continuous = tuple(float(v) for v in row[n_disc:])
        return self.validate(HybridAction(discrete, continuous))

    def from_grid_indices(self, indices: Sequence[int]) -> HybridAction:
        """Map per-part grid indices (see `grid_sizes`) to an action."""
        n_disc = len(self.discrete)
        continuous = tuple(float(part.grid[int(i)]) for part, i in zip(self.continuous, indices[n_disc:]))
        return self.validate(HybridAction(tuple(int(i) for i in indices[:n_disc]), continuous))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "discrete": [{"name": p.name, "cardinality": p.cardinality} for p in self.discrete],
            "continuous": [
                {"name": p.name, "low": p.low, "high": p.high, "grid": list(p.grid)} for p in self.continuous
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ActionSpace":
        return cls(
            discrete=tuple(DiscretePart(d["name"], int(d["cardinality"])) for d in data["discrete"]),
            continuous=tuple(
                ContinuousPart(c["name"], float(c["low"]), float(c["high"]), tuple(float(g) for g in c["grid"]))
                for c in data.get("continuous", [])
            ),
        )


@dataclass(frozen=True)
class Prompt:
    """
    Task descriptor prepended to every DT token sequence.

    Attributes:
        desired_return: Return the policy is asked to achieve
        constraints: Resource limits (max power, element count, UAV count, ...)
        environment: Environment configuration (path-loss exponents, region, ...)
    """

    desired_return: float
    constraints: Tuple[float, ...] = ()
    environment: Tuple[float, ...] = ()

    @property
    def dim(self) -> int:
        return 1 + len(self.constraints) + len(self.environment)

    def vector(self) -> np.ndarray:
        vec = np.asarray([self.desired_return, *self.constraints, *self.environment], dtype=np.float64)
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"prompt has non-finite entries: {vec.tolist()}")
        return vec

    def with_return(self, desired_return: float) -> "Prompt":
        return replace(self, desired_return=float(desired_return))


@dataclass
class StepResult:
    """Outcome of one environment step."""

    state: np.ndarray
    reward: float
    done: bool
    info: Dict[str, Any] = field(default_factory=dict)
