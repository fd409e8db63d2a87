"""Shared plumbing of the pipeline commands."""

import argparse
import logging
import time
from dataclasses import dataclass
from pathlib import Path

from src.schemas import RunConfig

logger = logging.getLogger(__name__)


@dataclass
class CommandContext:
    """
    Inputs every command receives.

    Attributes:
        config: Validated run config, seed already overridden by --seed
        out_dir: Directory all outputs are written to
        show_progress: tqdm bars on/off (--quiet)
    """

    config: RunConfig
    out_dir: Path
    show_progress: bool = True

    @property
    def seed(self) -> int:
        return self.config.seed

    def output(self, name: str) -> Path:
        return self.out_dir / name


def build_context(args: argparse.Namespace) -> CommandContext:
    config = RunConfig.from_file(args.config).with_seed(args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info("Run config %s (task %s, seed %d), outputs in %s", args.config, config.task, config.seed, out_dir)
    return CommandContext(config, out_dir, show_progress=not args.quiet)


class Stopwatch:
    """Wall-clock seconds since construction, or always 0.0 when disabled."""

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self._start = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self._start if self.enabled else 0.0
