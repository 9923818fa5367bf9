"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"ROIGANCK"  u32 version
    table: parameters    -- networks' parameters and running statistics
    table: optimizer     -- Adam moments and step counters
    table: meta          -- config JSON, epoch, RNG state JSON, counters

    table  := u32 count, entry * count
    entry  := u32 name_len, name (utf-8), u8 dtype tag, u8 ndim, u32 * ndim dims,
              u64 payload_len, payload (C order, little-endian)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FormatError

MAGIC = b"ROIGANCK"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1"), 4: np.dtype("<i8")}
_TAGS = {np.dtype(v).str: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict[str, np.ndarray] = field(default_factory=dict)

    def meta_json(self, key: str):
        return json.loads(self.meta[key].tobytes().decode())

    def set_meta_json(self, key: str, value) -> None:
        self.meta[key] = np.frombuffer(json.dumps(value, sort_keys=True).encode(), dtype=np.uint8).copy()


def _encode_table(table: dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<I", len(table))]
    for name, arr in table.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        tag = _TAGS.get(le.dtype.str)
        if tag is None:
            raise TypeError(f"checkpoint entry {name!r}: unsupported dtype {arr.dtype}")
        key = name.encode()
        out.append(struct.pack("<I", len(key)) + key)
        out.append(struct.pack("<BB", tag, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload = np.ascontiguousarray(le).tobytes()
        out.append(struct.pack("<Q", len(payload)) + payload)
    return b"".join(out)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    blob = MAGIC + struct.pack("<I", VERSION)
    blob += _encode_table(ckpt.params) + _encode_table(ckpt.optimizer) + _encode_table(ckpt.meta)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated while reading {what}", self.pos)
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def table(self, section: str) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I", f"{section} table size")
        out = {}
        for _ in range(count):
            (nlen,) = self.unpack("<I", f"{section} entry name length")
            start = self.pos
            name = self.take(nlen, f"{section} entry name").decode()
            tag, ndim = self.unpack("<BB", f"{section} entry {name!r} header")
            if tag not in _DTYPES:
                raise FormatError(f"{self.path}: entry {name!r} has unknown dtype tag {tag}", start)
            shape = self.unpack(f"<{ndim}I", f"{section} entry {name!r} shape")
            (plen,) = self.unpack("<Q", f"{section} entry {name!r} payload length")
            dt = _DTYPES[tag]
            expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if plen != expected:
                raise FormatError(f"{self.path}: entry {name!r} payload is {plen} bytes, shape {shape} needs {expected}", self.pos)
            payload = self.take(plen, f"{section} entry {name!r} payload")
            out[name] = np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        return out


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    r = _Reader(raw, path)
    magic = r.take(8, "magic")
    if magic != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic {magic!r})", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", 8)
    ckpt = Checkpoint(r.table("parameters"), r.table("optimizer"), r.table("meta"))
    if r.pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - r.pos} trailing bytes", r.pos)
    return ckpt


def rng_state_to_json(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return json.loads(json.dumps(st, default=int))


def rng_from_json(state: dict) -> np.random.Generator:
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)
