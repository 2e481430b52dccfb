#!/usr/bin/env python
"""
Checkpoint files.

A text header followed by a little-endian float64 payload::

    SIMIC-CKPT v1
    config {...json...}
    normalizer {...json...}
    tensors <count>
    tensor <name> <d0>x<d1>x... <byte offset into payload>
    ...
    end

The tensors are the model's state: parameters followed by the batch-norm
running statistics. Optimizer state is not stored.
"""
from __future__ import annotations

# std-lib imports
import json
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

# 3 party imports
import numpy as np

# project imports
from simic.model.config import ModelConfig
from simic.model.normalizer import Normalizer
from simic.model.simic import SimicModel, build

logger = logging.getLogger(__name__)

MAGIC = "SIMIC-CKPT"
VERSION = 1
_LE_FLOAT64 = np.dtype("<f8")


class CheckpointError(ValueError):
    """Unreadable, truncated or mismatching checkpoint."""


def save_checkpoint(path: Union[str, Path], model: SimicModel, normalizer: Normalizer) -> Path:
    path = Path(path)
    state = model.state_dict()
    lines = [
        f"{MAGIC} v{VERSION}",
        "config " + json.dumps(model.config.to_dict(), sort_keys=True),
        "normalizer " + json.dumps(normalizer.to_dict(), sort_keys=True),
        f"tensors {len(state)}",
    ]
    offset = 0
    chunks = []
    for name, array in state.items():
        shape = "x".join(str(s) for s in array.shape)
        lines.append(f"tensor {name} {shape} {offset}")
        chunk = np.ascontiguousarray(array, dtype=_LE_FLOAT64).tobytes()
        chunks.append(chunk)
        offset += len(chunk)
    lines.append("end")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(("\n".join(lines) + "\n").encode("utf-8") + b"".join(chunks))
    logger.debug("saved checkpoint %s with %d tensors", path, len(state))
    return path


def _read_line(buf: bytes, pos: int) -> Tuple[str, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise CheckpointError(f"truncated header at byte {pos}")
    try:
        return buf[pos:end].decode("utf-8"), end + 1
    except UnicodeDecodeError as e:
        raise CheckpointError(f"header line at byte {pos} is not UTF-8") from e


def read_checkpoint(path: Union[str, Path]) -> Tuple[ModelConfig, Normalizer, dict]:
    """
    Parses a checkpoint without building a model.

    Returns:
        Tuple[ModelConfig, Normalizer, dict]: the stored config, normalization
            statistics and the name -> array state.

    Raises:
        CheckpointError: On a wrong magic or version, a malformed header or a
            truncated payload.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint {str(path)!r} does not exist")
    buf = path.read_bytes()
    first, pos = _read_line(buf, 0)
    magic, _, version = first.partition(" ")
    if magic != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (magic {magic!r})")
    if version != f"v{VERSION}":
        raise CheckpointError(f"unsupported checkpoint version {version!r}, expected v{VERSION}")

    header = {}
    entries = []
    while True:
        line, pos = _read_line(buf, pos)
        if line == "end":
            break
        key, _, rest = line.partition(" ")
        if key == "tensor":
            parts = rest.split(" ")
            if len(parts) != 3:
                raise CheckpointError(f"malformed tensor line {line!r}")
            name, shape, offset = parts
            entries.append((name, tuple(int(s) for s in shape.split("x") if s), int(offset)))
        elif key in ("config", "normalizer", "tensors"):
            header[key] = rest
        else:
            raise CheckpointError(f"unknown header line {line!r}")

    try:
        config = ModelConfig.from_dict(json.loads(header["config"]))
        normalizer = Normalizer.from_dict(json.loads(header["normalizer"]))
        count = int(header["tensors"])
    except (KeyError, ValueError, TypeError) as e:
        raise CheckpointError(f"invalid checkpoint header: {e}") from e
    if count != len(entries):
        raise CheckpointError(f"header announces {count} tensors but lists {len(entries)}")

    payload = memoryview(buf)[pos:]
    state = {}
    for name, shape, offset in entries:
        nbytes = int(np.prod(shape, dtype=np.int64)) * _LE_FLOAT64.itemsize
        if offset + nbytes > len(payload):
            raise CheckpointError(f"truncated payload: tensor {name!r} needs bytes {offset}..{offset + nbytes}, "
                                  f"file has {len(payload)}")
        state[name] = np.frombuffer(payload[offset:offset + nbytes], dtype=_LE_FLOAT64).astype(np.float64).reshape(shape)
    return config, normalizer, state


def load_checkpoint(
    path: Union[str, Path], expected_config: Optional[ModelConfig] = None
) -> Tuple[SimicModel, Normalizer]:
    """
    Rebuilds the model stored in a checkpoint, in eval mode.

    Args:
        path (str | Path):
            Checkpoint file.
        expected_config (ModelConfig, optional):
            Config the caller expects. Defaults to `None`, meaning the stored
            config is used as is.

    Raises:
        CheckpointError: If the file is unreadable or its config differs from
            `expected_config` (the message names the differing fields).
    """
    config, normalizer, state = read_checkpoint(path)
    if expected_config is not None:
        differing = expected_config.differing_fields(config)
        if differing:
            details = ", ".join(
                f"{name} (checkpoint {getattr(config, name)!r}, expected {getattr(expected_config, name)!r})"
                for name in differing
            )
            raise CheckpointError(f"checkpoint config mismatch: {details}")
    model = build(config)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint tensors do not fit {config.name}: {e}") from e
    model.eval()
    return model, normalizer
