"""Binary checkpoint format.

Layout, all integers little-endian::

    b"MDGC" | u32 version (=1) | u32 len | JSON blob
    | u32 tensor count
    | per tensor: u32 len | utf-8 name | u8 rank | u32 dims[rank] | f64 data

The JSON blob is the architecture config; training metadata, when present,
rides along under its ``"training"`` key.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from fundusnet.models import ArchitectureConfig, Model
from fundusnet.neuralnet import layers as L

MAGIC = b"MDGC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_save(model: Model, metadata: dict | None = None) -> bytes:
    blob = model.config.to_json()
    if metadata:
        blob["training"] = metadata
    arch = json.dumps(blob, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(arch)), arch,
             struct.pack("<I", len(model.params))]
    for name, value in model.params.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)) + encoded)
        parts.append(struct.pack("<B", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint while reading {what} at offset {self.pos} "
                f"(need {n} bytes, {len(self.data) - self.pos} left)"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def checkpoint_load(data: bytes) -> tuple[Model, dict]:
    """Returns ``(model, training_metadata)``."""
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    arch_len = r.u32("architecture length")
    try:
        blob = json.loads(r.take(arch_len, "architecture").decode("utf-8"))
        metadata = blob.pop("training", {})
        config = ArchitectureConfig.from_json(blob)
    except CheckpointError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"invalid architecture blob: {exc}") from exc

    expected = {f"{s.name}.{p}": tuple(shape)
                for s in config.layers for p, shape in L.param_shapes(s).items()}
    count = r.u32("tensor count")
    params = {}
    for _ in range(count):
        name = r.take(r.u32("tensor name length"), "tensor name").decode("utf-8")
        rank = r.take(1, f"rank of tensor {name!r}")[0]
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"dims of tensor {name!r}"))
        if name not in expected:
            raise CheckpointError(f"tensor {name!r} is not part of architecture {config.name}")
        if dims != expected[name]:
            raise CheckpointError(
                f"tensor {name!r} has shape {dims}, architecture expects {expected[name]}"
            )
        size = int(np.prod(dims))
        raw = r.take(8 * size, f"data of tensor {name!r}")
        params[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
    missing = set(expected) - set(params)
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors {sorted(missing)}")
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return Model(config, params), metadata


def atomic_write(path, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
