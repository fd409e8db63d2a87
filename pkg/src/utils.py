"""
Utility functions for the pipeline.

Seeding helpers and small curve utilities shared by the service and CLI
layers.
"""

import logging
import random
import zlib
from typing import Sequence, Union

import numpy as np
import torch

logger = logging.getLogger(__name__)

SeedKey = Union[int, str]


def seed_everything(seed: int) -> None:
    """
    Seed every global RNG the pipeline touches.

    Args:
        seed: Run seed from the config or `--seed`
    """
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    logger.debug("Seeded python/numpy/torch with %d", seed)


def _key_to_int(key: SeedKey) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key)


def derive_seed(seed: int, *keys: SeedKey) -> int:
    """
    Derive an independent child seed from a run seed and a key path.

    Same (seed, keys) always yields the same child; different key paths
    give statistically independent streams. String keys (scenario ids,
    phase names) are hashed with CRC32.

    Args:
        seed: Parent seed
        *keys: Path of ints/strings identifying the consumer

    Returns:
        int: Child seed in [0, 2**31)
    """
    entropy = [int(seed) % (2**63)] + [_key_to_int(k) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)
    return int(state[0]) & 0x7FFFFFFF


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average; the first window-1 points average what exists."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return arr
    csum = np.concatenate([[0.0], np.cumsum(arr)])
    idx = np.arange(1, arr.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def format_seconds(seconds: float) -> str:
    """Human-readable duration for log lines, e.g. "1h02m03s" or "4.2s"."""
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes, secs = divmod(int(round(seconds)), 60)
    hours, minutes = divmod(minutes, 60)
    if hours:
        return f"{hours}h{minutes:02d}m{secs:02d}s"
    return f"{minutes}m{secs:02d}s"
