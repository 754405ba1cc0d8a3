"""Binary checkpoints.

Layout (all integers little-endian)::

    b"DCRN"                  magic
    u32 version              currently 1
    u32 meta_len             length of the metadata block
    meta_len bytes           UTF-8 JSON: cell, n, d, o, k, step, rng_state, extra
    u32 tensor_count
    per tensor:
        u16 name_len, name bytes (ASCII)
        u32 ndim, ndim x u32 dims
        prod(dims) x f64 values, row-major

Loading validates magic, version, every length and the tensor set against
the cell kind, so truncated or foreign files fail with a byte offset.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError, StructuralError, UnsupportedVersionError
from ..net import PARAM_TYPES, Params

MAGIC = b"DCRN"
VERSION = 1


@dataclass
class Checkpoint:
    params: Params
    step: int = 0
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def cell(self):
        return self.params.kind

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (self.params == other.params and self.step == other.step
                and self.rng_state == other.rng_state and self.extra == other.extra)


def dumps_checkpoint(c: Checkpoint) -> bytes:
    p = c.params
    meta = {"cell": p.kind, "n": p.n, "d": p.d, "o": p.o, "k": p.k, "step": int(c.step),
            "rng_state": c.rng_state, "extra": c.extra}
    meta_raw = json.dumps(meta, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(meta_raw)))
    buf.write(meta_raw)
    tensors = p.tensors()
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw_name = name.encode("ascii")
        buf.write(struct.pack("<H", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise FormatError(f"truncated {what}: need {n} bytes, {len(self.raw) - self.pos} left",
                              offset=len(self.raw))
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads_checkpoint(raw: bytes) -> Checkpoint:
    r = _Reader(raw)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad checkpoint magic", offset=0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version} (expected {VERSION})",
                                      offset=4)
    (meta_len,) = r.unpack("<I", "metadata length")
    meta_at = r.pos
    try:
        meta = json.loads(r.take(meta_len, "metadata"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"unreadable metadata: {exc}", offset=meta_at) from exc
    cls = PARAM_TYPES.get(meta.get("cell"))
    if cls is None:
        raise FormatError(f"unknown cell kind {meta.get('cell')!r}", offset=meta_at)
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        at = r.pos
        (name_len,) = r.unpack("<H", "tensor name length")
        name = r.take(name_len, "tensor name").decode("ascii", errors="replace")
        (ndim,) = r.unpack("<I", "tensor rank")
        shape = r.unpack(f"<{ndim}I", "tensor shape")
        size = math.prod(shape)
        values = np.frombuffer(r.take(8 * size, f"tensor {name}"), dtype="<f8").reshape(shape)
        if name in tensors:
            raise FormatError(f"duplicate tensor {name!r}", offset=at)
        tensors[name] = values.astype(np.float64)
    if r.pos != len(raw):
        raise FormatError("trailing bytes after last tensor", offset=r.pos)
    if set(tensors) != set(cls.names()):
        raise FormatError(f"tensor set {sorted(tensors)} does not match a {meta['cell']} cell",
                          offset=meta_at)
    try:
        params = cls.from_tensors(tensors)
    except StructuralError as exc:
        raise FormatError(f"inconsistent tensor shapes: {exc}", offset=meta_at) from exc
    dims = {"n": params.n, "d": params.d, "o": params.o, "k": params.k}
    if any(meta.get(key) != val for key, val in dims.items()):
        raise FormatError(f"metadata dims {[meta.get(k) for k in dims]} disagree with tensors "
                          f"{list(dims.values())}", offset=meta_at)
    return Checkpoint(params, meta.get("step", 0), meta.get("rng_state"), meta.get("extra", {}))


def save_checkpoint(path, c: Checkpoint):
    Path(path).write_bytes(dumps_checkpoint(c))


def load_checkpoint(path) -> Checkpoint:
    return loads_checkpoint(Path(path).read_bytes())
