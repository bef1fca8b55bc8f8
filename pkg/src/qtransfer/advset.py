"""Adversarial-set container.

Layout (integers little-endian)::

    b"QADV" | u16 version | u32 count | u8 ndim | ndim x u32 sample shape
    | clean float32[count * prod(shape)] | adversarial float32[...]
    | labels u8[count] | success flags u8[count]
    | u32 trailer length | JSON trailer (source, attack params, indices, norms)
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .attacks import AdversarialBatch
from .data import atomic_write
from .errors import FormatError

MAGIC = b"QADV"
VERSION = 1
_HEAD = struct.Struct("<4sHIB")


def encode_advset(batch: AdversarialBatch) -> bytes:
    n = len(batch)
    shape = batch.clean.shape[1:]
    if n and batch.labels.max() > 255:
        raise FormatError("labels above 255 do not fit the byte-wide label field")
    trailer = {
        "source_id": batch.source_id,
        "attack": batch.attack,
        "params": batch.params,
        "indices": [int(i) for i in batch.indices],
        "l2": [float(v) for v in batch.l2],
        "linf": [float(v) for v in batch.linf],
        "dropped": [int(i) for i in batch.dropped],
    }
    tail = json.dumps(trailer, sort_keys=True).encode("utf-8")
    parts = [
        _HEAD.pack(MAGIC, VERSION, n, len(shape)),
        struct.pack(f"<{len(shape)}I", *shape),
        np.ascontiguousarray(batch.clean, dtype="<f4").tobytes(),
        np.ascontiguousarray(batch.adversarial, dtype="<f4").tobytes(),
        np.asarray(batch.labels, dtype=np.uint8).tobytes(),
        np.asarray(batch.source_success, dtype=np.uint8).tobytes(),
        struct.pack("<I", len(tail)),
        tail,
    ]
    return b"".join(parts)


def decode_advset(buf: bytes) -> AdversarialBatch:
    if len(buf) < _HEAD.size:
        raise FormatError("adversarial set truncated in header", offset=len(buf))
    magic, version, n, ndim = _HEAD.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad adversarial-set magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported adversarial-set version {version}", offset=4)
    pos = _HEAD.size
    if len(buf) < pos + 4 * ndim:
        raise FormatError("adversarial set truncated in shape", offset=len(buf))
    shape = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    per = int(np.prod(shape, dtype=np.int64))

    def take(nbytes, what):
        nonlocal pos
        if pos + nbytes > len(buf):
            raise FormatError(f"adversarial set truncated in {what}", offset=pos)
        chunk = buf[pos:pos + nbytes]
        pos += nbytes
        return chunk

    clean = np.frombuffer(take(4 * n * per, "clean images"), dtype="<f4").reshape((n,) + shape)
    adv = np.frombuffer(take(4 * n * per, "adversarial images"), dtype="<f4").reshape((n,) + shape)
    labels = np.frombuffer(take(n, "labels"), dtype=np.uint8).astype(np.int64)
    success = np.frombuffer(take(n, "success flags"), dtype=np.uint8).astype(bool)
    (tail_len,) = struct.unpack("<I", take(4, "trailer length"))
    try:
        trailer = json.loads(take(tail_len, "trailer").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable trailer: {e}", offset=pos - tail_len) from None
    if pos != len(buf):
        raise FormatError("trailing bytes after adversarial set", offset=pos)
    return AdversarialBatch(clean.astype(np.float32), adv.astype(np.float32), labels,
                            np.asarray(trailer["indices"], dtype=np.int64), trailer["source_id"],
                            trailer["attack"], trailer["params"], success,
                            np.asarray(trailer["l2"]), np.asarray(trailer["linf"]),
                            list(trailer["dropped"]))


def save_advset(path, batch: AdversarialBatch):
    atomic_write(path, encode_advset(batch))


def load_advset(path) -> AdversarialBatch:
    return decode_advset(Path(path).read_bytes())
