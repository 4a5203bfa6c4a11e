"""
Named-tensor checkpoint files.

PURPOSE: Bit-exact persistence of named arrays plus a JSON metadata block
DEPENDENCIES: numpy

ARCHITECTURE NOTES:
Layout (all integers little-endian):
- magic b"TPCK", u16 format version, u32 tensor count, u32 metadata length,
  metadata as UTF-8 JSON with sorted keys
- per tensor: u16 name length, UTF-8 name, u8 dtype tag, u8 ndim, u32 per dimension,
  raw little-endian buffer
- Tensors are written in sorted name order so equal contents give equal bytes
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from triplane_posterior.diffcore.tensor import Tensor

MAGIC = b"TPCK"
FORMAT_VERSION = 1

_DTYPE_TAGS: dict[str, int] = {"<f4": 0, "<f8": 1, "<i8": 2}
_TAG_DTYPES = {v: np.dtype(k) for k, v in _DTYPE_TAGS.items()}


class CheckpointError(ValueError):
    """Raised for unreadable or malformed checkpoint files."""


@dataclass
class Checkpoint:
    """Decoded checkpoint contents."""

    tensors: dict[str, np.ndarray]
    metadata: dict[str, Any] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        head = prefix + "."
        return {k: v for k, v in self.tensors.items() if k.startswith(head)}


def encode_checkpoint(
    tensors: Mapping[str, np.ndarray | Tensor], metadata: Mapping[str, Any] | None = None
) -> bytes:
    meta = json.dumps(dict(metadata or {}), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HII", FORMAT_VERSION, len(tensors), len(meta)), meta]
    for name in sorted(tensors):
        value = tensors[name]
        array = value.data if isinstance(value, Tensor) else np.asarray(value)
        le = array.astype(array.dtype.newbyteorder("<"), copy=False)
        tag = _DTYPE_TAGS.get(le.dtype.str)
        if tag is None:
            raise CheckpointError(f"Unsupported dtype {array.dtype} for tensor {name}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", tag, le.ndim))
        parts.append(struct.pack(f"<{le.ndim}I", *le.shape))
        parts.append(np.ascontiguousarray(le).tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("Not a checkpoint file (bad magic)")
    try:
        version, count, meta_len = struct.unpack_from("<HII", view, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"Unsupported checkpoint version {version}")
        offset = 14
        metadata = json.loads(bytes(view[offset : offset + meta_len]).decode("utf-8"))
        offset += meta_len

        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", view, offset)
            offset += 2
            name = bytes(view[offset : offset + name_len]).decode("utf-8")
            offset += name_len
            tag, ndim = struct.unpack_from("<BB", view, offset)
            offset += 2
            shape = struct.unpack_from(f"<{ndim}I", view, offset)
            offset += 4 * ndim
            dtype = _TAG_DTYPES[tag]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if offset + nbytes > len(view):
                raise CheckpointError(f"Truncated data for tensor {name}")
            array = np.frombuffer(view[offset : offset + nbytes], dtype=dtype).reshape(shape)
            tensors[name] = array.astype(dtype.newbyteorder("="), copy=True)
            offset += nbytes
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Malformed checkpoint: {e}")
    return Checkpoint(tensors=tensors, metadata=metadata, version=version)


def save_checkpoint(
    path: Path,
    tensors: Mapping[str, np.ndarray | Tensor],
    metadata: Mapping[str, Any] | None = None,
) -> Path:
    """Write a checkpoint atomically (temporary file, then rename)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(tensors, metadata))
    tmp.replace(path)
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def file_digest(path: Path) -> str:
    """SHA-256 of a file, hex encoded."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
