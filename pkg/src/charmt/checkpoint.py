"""Binary checkpoint container.

Layout::

    b"CHARMT01"
    uint32 header length, UTF-8 JSON header (config, layout, vocabularies)
    uint32 tensor count
    per tensor: uint16 name length, name, uint8 ndim, uint32 dims..., float32 data

All integers and floats are little-endian.  Tensors are written in sorted name
order and the header uses sorted keys, so equal models give equal bytes.
"""

from __future__ import annotations

import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .model import Model, Vocabs
from .numerics import ParamStore

MAGIC = b"CHARMT01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def to_bytes(model: Model, extra: dict | None = None) -> bytes:
    header = {
        "version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "layout": {"source": model.source, "target": model.target, "output": model.output},
        "vocabs": model.vocabs.to_dict(),
        "extra": extra or {},
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    names = sorted(model.store.names())
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        value = np.asarray(model.store[name])
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", value.ndim))
        buf.write(struct.pack(f"<{value.ndim}I", *value.shape))
        buf.write(value.astype("<f4").tobytes())
    return buf.getvalue()


def save(path, model: Model, extra: dict | None = None):
    """Write atomically: a temporary file is renamed over ``path``."""
    path = Path(path)
    data = to_bytes(model, extra)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes, dtype=None) -> tuple[Model, dict]:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (n,) = r.unpack("<I")
    try:
        header = json.loads(r.take(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    try:
        config = ModelConfig.from_dict(header["config"])
        if dtype is not None:
            config = config.replace(dtype=dtype)
        layout = header["layout"]
        vocabs = Vocabs.from_dict(header["vocabs"])
        model = Model(config, vocabs, layout["source"], layout["target"], layout["output"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    expected = model.expected_shapes()
    store = ParamStore(config.dtype)
    (count,) = r.unpack("<I")
    for _ in range(count):
        (ln,) = r.unpack("<H")
        try:
            name = r.take(ln).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError("corrupt tensor name") from None
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        value = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        if name not in expected:
            raise CheckpointError(f"unexpected tensor {name!r}")
        if tuple(shape) != tuple(expected[name]):
            raise CheckpointError(f"tensor {name!r} has shape {tuple(shape)}, expected {tuple(expected[name])}")
        if name in store:
            raise CheckpointError(f"duplicate tensor {name!r}")
        if not np.isfinite(value).all():
            raise CheckpointError(f"tensor {name!r} has non-finite values")
        store.add(name, value)
    missing = sorted(set(expected) - set(store.names()))
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {', '.join(missing)}")
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after the last tensor")
    model.store = store
    return model, header.get("extra", {})


def load(path, dtype=None) -> tuple[Model, dict]:
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), dtype)
