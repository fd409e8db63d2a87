"""
Learning-curve statistics for the comparison stage.

plateau     : mean of the final quarter of a curve
convergence : first step whose 5-point trailing moving average reaches a level
speedup     : PPO convergence step / DT-FT convergence step, both measured
              against 90% of the PPO plateau
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from src.configs import CONVERGENCE_FRACTION, MOVING_AVERAGE_WINDOW, PLATEAU_FRACTION
from src.utils import moving_average

logger = logging.getLogger(__name__)


@dataclass
class SpeedupReport:
    """
    Attributes:
        level: Target return (fraction x PPO plateau)
        ppo_plateau: Final-quarter mean of the PPO curve
        dt_plateau: Final-quarter mean of the DT-FT curve
        ppo_steps: Env steps PPO needs to reach `level` (None if never)
        dt_steps: Env steps DT-FT needs to reach `level` (None if never)
        speedup: ppo_steps / dt_steps, NaN when either never converges
        improvement: dt_plateau / ppo_plateau - 1
    """

    level: float
    ppo_plateau: float
    dt_plateau: float
    ppo_steps: Optional[int]
    dt_steps: Optional[int]
    speedup: float
    improvement: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OneSidedTest:
    margin: float
    statistic: float
    pvalue: float


def plateau_mean(values: Sequence[float], fraction: float = PLATEAU_FRACTION) -> float:
    """Mean of the last ceil(fraction * n) points (at least one)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("plateau of an empty curve")
    count = max(1, int(math.ceil(fraction * arr.size)))
    return float(arr[-count:].mean())


def convergence_step(
    steps: Sequence[int],
    values: Sequence[float],
    level: float,
    window: int = MOVING_AVERAGE_WINDOW,
) -> Optional[int]:
    """First entry of `steps` where the moving average of `values` is >= level."""
    if len(steps) != len(values):
        raise ValueError(f"{len(steps)} steps for {len(values)} values")
    smoothed = moving_average(values, window)
    hits = np.nonzero(smoothed >= level)[0]
    return int(steps[hits[0]]) if hits.size else None


def speedup_statistic(  # pylint: disable=too-many-arguments
    ppo_steps: Sequence[int],
    ppo_values: Sequence[float],
    dt_steps: Sequence[int],
    dt_values: Sequence[float],
    fraction: float = CONVERGENCE_FRACTION,
    window: int = MOVING_AVERAGE_WINDOW,
) -> SpeedupReport:
    """Compare two learning curves on the env-step axis."""
    ppo_plateau = plateau_mean(ppo_values)
    dt_plateau = plateau_mean(dt_values)
    level = fraction * ppo_plateau
    ppo_at = convergence_step(ppo_steps, ppo_values, level, window)
    dt_at = convergence_step(dt_steps, dt_values, level, window)
    if ppo_at is None or dt_at is None:
        speedup = float("nan")
    elif dt_at == 0:
        speedup = float("inf")
    else:
        speedup = ppo_at / dt_at
    improvement = dt_plateau / ppo_plateau - 1.0 if ppo_plateau != 0 else float("nan")
    report = SpeedupReport(level, ppo_plateau, dt_plateau, ppo_at, dt_at, float(speedup), float(improvement))
    logger.info(
        "Speedup %.3f (PPO %s steps, DT-FT %s steps to %.4f); plateau ratio %+.2f%%",
        report.speedup,
        ppo_at,
        dt_at,
        level,
        100.0 * report.improvement,
    )
    return report


def one_sided_test(high: Sequence[float], low: Sequence[float]) -> OneSidedTest:
    """Welch t-test of mean(high) > mean(low)."""
    high_arr = np.asarray(high, dtype=np.float64)
    low_arr = np.asarray(low, dtype=np.float64)
    margin = float(high_arr.mean() - low_arr.mean())
    result = stats.ttest_ind(high_arr, low_arr, equal_var=False, alternative="greater")
    return OneSidedTest(margin, float(result.statistic), float(result.pvalue))
