"""
Exception buckets for the command surface.

Every exception escaping a command is classified into one bucket; the
router logs it and exits with the bucket's code. Exit 0 means success.
"""

import json

from pydantic import ValidationError

from src.crud.crud_checkpoint import CheckpointFormatError
from src.crud.crud_dataset import DatasetFormatError
from src.numerics import NumericsError
from src.schemas import UnknownScenarioError

EXIT_CODES = {
    "unknown": 1,
    "config_error": 2,
    "input_missing": 3,
    "format_error": 4,
    "numeric_error": 5,
    "runtime_error": 6,
}

ERROR_USER_MESSAGE = {
    "config_error": "The run config is invalid or references an undefined scenario.",
    "input_missing": "An input file (config, dataset or checkpoint) does not exist.",
    "format_error": "An input file is not in a readable dataset/checkpoint format.",
    "numeric_error": "A computation produced NaN/Inf or tensors of mismatching shapes.",
    "runtime_error": "A pipeline stage failed; see the log for details.",
    "unknown": "Unexpected failure; see the log for the traceback.",
}


def classify_command_error(exc: BaseException) -> str:
    """Bucket an exception into one of the EXIT_CODES keys."""
    if isinstance(exc, (ValidationError, UnknownScenarioError)):
        return "config_error"
    if isinstance(exc, FileNotFoundError):
        return "input_missing"
    if isinstance(exc, (DatasetFormatError, CheckpointFormatError, json.JSONDecodeError)):
        return "format_error"
    if isinstance(exc, NumericsError):
        return "numeric_error"
    if isinstance(exc, (ValueError, RuntimeError, AssertionError, KeyError, OSError)):
        return "runtime_error"
    return "unknown"


def exit_code_for(exc: BaseException) -> int:
    return EXIT_CODES[classify_command_error(exc)]
