"""
Pipeline entry point and logging configuration.

`main(argv)` parses the command line, configures logging into the output
directory, runs one command and returns its exit code: 0 on success,
otherwise the code of the error bucket (see `src.cli._command_errors`).
"""

import logging
import time
from pathlib import Path
from typing import Optional, Sequence, Union

from src.cli._command_errors import ERROR_USER_MESSAGE, EXIT_CODES, classify_command_error
from src.cli._common import build_context
from src.cli.cli_router import COMMANDS, parse_args
from src.configs import LOG_DIR
from src.utils import format_seconds, seed_everything

LOG_FILE = "pipeline.log"


def configure_logging(log_dir: Union[str, Path] = LOG_DIR, level: int = logging.INFO) -> None:
    """
    Configure pipeline logging.

    Sets up console and file logging (`<log_dir>/pipeline.log`); calling
    it again replaces the handlers of the previous run.
    """
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=level,
        format=("%(asctime)s - %(name)s - %(levelname)s - %(message)s"),
        handlers=[logging.StreamHandler(), logging.FileHandler(log_dir / LOG_FILE, encoding="utf-8")],
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    configure_logging(args.out)
    logger = logging.getLogger(__name__)
    logger.info("Starting %s", args.command)

    started = time.perf_counter()
    try:
        ctx = build_context(args)
        seed_everything(ctx.seed)
        output = COMMANDS[args.command].run(ctx, args)
    except Exception as exc:  # pylint: disable=broad-except
        bucket = classify_command_error(exc)
        logger.error("%s failed [%s]: %s", args.command, bucket, exc, exc_info=bucket == "unknown")
        logger.error(ERROR_USER_MESSAGE[bucket])
        return EXIT_CODES[bucket]
    logger.info("%s finished in %s -> %s", args.command, format_seconds(time.perf_counter() - started), output)
    return 0
