"""
Checkpoint persistence for DT models.

Layout (little-endian):

    b"DTCK"                      magic
    uint32                       header length in bytes
    header (UTF-8 JSON)          format_version, settings, prompt_dim,
                                 registry, seed, tags, num_tensors
    num_tensors x blob           uint16 name length, name (UTF-8),
                                 uint8 ndim, ndim x uint32 extents,
                                 prod(extents) x float64 values

Blobs follow `state_dict()` order. Loading rebuilds the model from the
settings and adapter registry and then fills every tensor by name.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Dict, Optional, Union

import numpy as np
import torch
from pydantic import ValidationError

from src.configs import CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MAGIC
from src.schemas import DTModelSettings
from src.service.dt.dt_model import DTModel

logger = logging.getLogger(__name__)


class CheckpointFormatError(ValueError):
    """The file is not a readable checkpoint."""


class CheckpointVersionError(CheckpointFormatError):
    """The header carries a format version this code does not read."""


@dataclass
class Checkpoint:
    """
    A model together with its run metadata.

    Attributes:
        model: Rebuilt DTModel in eval mode
        seed: Seed of the run that produced it
        tags: Free-form labels (stage, fine-tuned scenario, ...)
    """

    model: DTModel
    seed: int
    tags: Dict[str, Any] = field(default_factory=dict)


def _read_exact(handle: BinaryIO, size: int, what: str) -> bytes:
    data = handle.read(size)
    if len(data) != size:
        raise CheckpointFormatError(f"truncated file while reading {what}")
    return data


def save_checkpoint(
    path: Union[str, Path],
    model: DTModel,
    seed: int,
    tags: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    Write `model` to `path`.

    Args:
        path (Union[str, Path]): Destination file
        model (DTModel): Model to persist
        seed (int): Run seed recorded in the header
        tags (Optional[Dict[str, Any]]): Extra JSON-serialisable labels

    Returns:
        Path: The written path
    """
    state = model.state_dict()
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "settings": model.settings.model_dump(mode="json"),
        "prompt_dim": model.prompt_dim,
        "registry": model.registry(),
        "seed": int(seed),
        "tags": dict(tags or {}),
        "num_tensors": len(state),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<I", len(header_bytes)))
        handle.write(header_bytes)
        for name, tensor in state.items():
            encoded = name.encode("utf-8")
            values = tensor.detach().cpu().numpy().astype("<f8", copy=False)
            handle.write(struct.pack("<H", len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack("<B", values.ndim))
            handle.write(struct.pack(f"<{values.ndim}I", *values.shape))
            handle.write(np.ascontiguousarray(values).tobytes())
    logger.info("Saved checkpoint with %d tensors and scenarios %s to %s", len(state), list(model.scenarios), path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Read a checkpoint and rebuild its model.

    Args:
        path (Union[str, Path]): Checkpoint file

    Returns:
        Checkpoint: Model (eval mode), seed and tags

    Raises:
        FileNotFoundError: No such file
        CheckpointVersionError: Unknown format version
        CheckpointFormatError: Bad magic, header, truncated or mismatching tensor
    """
    path = Path(path)
    with path.open("rb") as handle:
        if _read_exact(handle, len(CHECKPOINT_MAGIC), "magic") != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"{path} is not a checkpoint (bad magic)")
        (header_len,) = struct.unpack("<I", _read_exact(handle, 4, "header length"))
        try:
            header = json.loads(_read_exact(handle, header_len, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointFormatError(f"unreadable header: {exc}") from exc
        version = header.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint format version {version} is not supported (expected {CHECKPOINT_FORMAT_VERSION})"
            )
        try:
            settings = DTModelSettings.model_validate(header["settings"])
            model = DTModel.from_registry(settings, int(header["prompt_dim"]), header["registry"])
        except (KeyError, ValidationError) as exc:
            raise CheckpointFormatError(f"invalid header: {exc}") from exc

        tensors: Dict[str, torch.Tensor] = {}
        for index in range(int(header["num_tensors"])):
            what = f"tensor {index}"
            (name_len,) = struct.unpack("<H", _read_exact(handle, 2, what))
            name = _read_exact(handle, name_len, what).decode("utf-8")
            what = f"tensor {index} ({name})"
            (ndim,) = struct.unpack("<B", _read_exact(handle, 1, what))
            shape = struct.unpack(f"<{ndim}I", _read_exact(handle, 4 * ndim, what))
            count = int(np.prod(shape)) if ndim else 1
            values = np.frombuffer(_read_exact(handle, 8 * count, what), dtype="<f8").reshape(shape)
            tensors[name] = torch.from_numpy(values.astype(np.float64))
        if handle.read(1):
            raise CheckpointFormatError(f"{path} has trailing bytes after {header['num_tensors']} tensors")

    expected = model.state_dict()
    missing = sorted(set(expected) - set(tensors))
    unexpected = sorted(set(tensors) - set(expected))
    if missing or unexpected:
        raise CheckpointFormatError(
            f"tensor names disagree with the model: missing {missing}, unexpected {unexpected}"
        )
    for name, tensor in tensors.items():
        if tuple(tensor.shape) != tuple(expected[name].shape):
            raise CheckpointFormatError(
                f"tensor {name}: stored shape {tuple(tensor.shape)}, model expects {tuple(expected[name].shape)}"
            )
    model.load_state_dict(tensors)
    model.eval()
    logger.info("Loaded checkpoint from %s (scenarios %s)", path, list(model.scenarios))
    return Checkpoint(model, int(header["seed"]), dict(header.get("tags", {})))
