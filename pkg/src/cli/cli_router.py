"""
Command router configuration.

This module aggregates the pipeline commands into a single argparse
parser. Every command takes --config, --seed, --out and --quiet plus its
own options, and is dispatched to the module's `run(ctx, args)`.
"""

import argparse
from types import ModuleType
from typing import Dict, Optional, Sequence

from src.cli import collect, compare, evaluate, finetune, pretrain

# Command name -> implementing module, in workflow order
COMMANDS: Dict[str, ModuleType] = {
    "collect": collect,
    "pretrain": pretrain,
    "finetune": finetune,
    "evaluate": evaluate,
    "compare": compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="run_pipeline.py",
        description="Decision-Transformer resource-management pipeline",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, module in COMMANDS.items():
        sub = subparsers.add_parser(name, help=(module.__doc__ or "").strip().splitlines()[0])
        sub.add_argument("--config", required=True, help="JSON run config")
        sub.add_argument("--seed", type=int, default=None, help="Override the config seed")
        sub.add_argument("--out", required=True, help="Output directory")
        sub.add_argument("--quiet", action="store_true", help="Hide progress bars")
        module.add_arguments(sub)
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)
