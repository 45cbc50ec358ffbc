"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic   b"QAANCKPT"
    u16     format version
    u32     header length, then a UTF-8 JSON header
    u32     array count
    per array: u16 name length, name, u8 ndim, u64 * ndim shape, float64 data
    u32     CRC-32 of every preceding byte

The JSON header carries the module tag, a config snapshot, RNG stream
positions and scalar optimizer state.  Arrays are stored as float64, so
integer-valued state (e.g. persistent chains) round-trips exactly.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path
from typing import Any

import numpy as np

from . import nn
from .qbm import QbmParams
from .rbm import RbmParams

MAGIC = b"QAANCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(tag: str, arrays: dict[str, np.ndarray], header: dict | None = None) -> bytes:
    meta = dict(header or {})
    meta["tag"] = tag
    head = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(head)), head, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        a = np.require(arr, dtype="<f8", requirements="C")  # keeps 0-d shapes
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key + struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(a.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes) -> tuple[str, dict[str, np.ndarray], dict]:
    """Inverse of :func:`encode`; returns (tag, arrays, header)."""
    if len(buf) < len(MAGIC) + 4 or buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise CheckpointError("checkpoint is corrupt or truncated (checksum mismatch)")
    r = _Reader(buf[:-4])
    r.take(len(MAGIC))
    version, head_len = r.unpack("<HI")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    header = json.loads(r.take(head_len).decode("utf-8"))
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(r.buf):
        raise CheckpointError("trailing bytes after the last array")
    return header.pop("tag"), arrays, header


def save_checkpoint(path, tag: str, arrays: dict[str, np.ndarray], header: dict | None = None) -> None:
    """Write atomically: a partial file never replaces a good one."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(tag, arrays, header))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray], dict]:
    return decode(Path(path).read_bytes())


# Packing helpers for the model types.

def pack_rbm(p: RbmParams, prefix: str = "rbm") -> dict[str, np.ndarray]:
    return {f"{prefix}.visible_bias": p.visible_bias, f"{prefix}.hidden_bias": p.hidden_bias,
            f"{prefix}.weights": p.weights}


def unpack_rbm(arrays: dict[str, np.ndarray], prefix: str = "rbm") -> RbmParams:
    return RbmParams(*(_get(arrays, f"{prefix}.{k}") for k in ("visible_bias", "hidden_bias", "weights")))


def pack_qbm(p: QbmParams, prefix: str = "qbm") -> dict[str, np.ndarray]:
    return {f"{prefix}.gamma": p.gamma, f"{prefix}.visible_bias": p.visible_bias,
            f"{prefix}.hidden_bias": p.hidden_bias, f"{prefix}.weights": p.weights}


def unpack_qbm(arrays: dict[str, np.ndarray], prefix: str = "qbm") -> QbmParams:
    return QbmParams(*(_get(arrays, f"{prefix}.{k}") for k in ("gamma", "visible_bias", "hidden_bias", "weights")))


def pack_net(net: nn.DenseNet, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.{i}": a for i, a in enumerate(net.params())}


def unpack_net_into(net: nn.DenseNet, arrays: dict[str, np.ndarray], prefix: str) -> None:
    """Overwrite ``net``'s parameters in place, checking every shape."""
    for i, target in enumerate(net.params()):
        src = _get(arrays, f"{prefix}.{i}")
        if src.shape != target.shape:
            raise CheckpointError(f"{prefix}.{i}: shape {src.shape} does not match {target.shape}")
        target[...] = src


def pack_adam(opt: nn.Adam, prefix: str) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    arrays = {f"{prefix}.{i}": a for i, a in enumerate(opt.state_arrays())}
    return arrays, {"step_count": opt.step_count, "moments": len(opt.state_arrays())}


def unpack_adam_into(opt: nn.Adam, arrays: dict[str, np.ndarray], prefix: str, meta: dict) -> None:
    opt.step_count = int(meta["step_count"])
    opt.load_arrays([_get(arrays, f"{prefix}.{i}") for i in range(int(meta["moments"]))])


def _get(arrays: dict[str, np.ndarray], name: str) -> np.ndarray:
    if name not in arrays:
        raise CheckpointError(f"checkpoint is missing array {name!r}")
    return arrays[name]


def check_shapes(expected: dict[str, np.ndarray], arrays: dict[str, np.ndarray]) -> None:
    for name, arr in expected.items():
        got = _get(arrays, name)
        if got.shape != np.shape(arr):
            raise CheckpointError(f"{name}: shape {got.shape} does not match configured {np.shape(arr)}")
