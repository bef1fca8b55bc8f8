"""Checkpoint container.

Layout (all integers little-endian)::

    b"QNTK" | u16 version | u32 header length | JSON header (UTF-8)
    | float32 blob (parameters then buffers, in header order)
    | sha256 of everything before it (32 bytes)

The header carries the model id, QuantConfig (0 = FP), the layer table,
each tensor's name and shape, and the training seed. Parameters are the
full-precision shadow values; quantized weights are re-derived on load.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .data import atomic_write
from .errors import FormatError
from .nn import LayerSpec, Model
from .quant import QuantConfig

MAGIC = b"QNTK"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")
DIGEST_LEN = 32


def encode_checkpoint(model: Model, meta: dict | None = None) -> bytes:
    tensors = [("param", k, v) for k, v in model.params.items()]
    tensors += [("buffer", k, v) for k, v in sorted(model.buffers.items())]
    header = {
        "model_id": model.model_id,
        "dataset_id": model.dataset_id,
        "input_shape": list(model.input_shape),
        "quant": {
            "weight_bits": model.quant.weight_bits,
            "activation_bits": model.quant.activation_bits,
            "exempt_first_layer": model.quant.exempt_first_layer,
            "exempt_last_layer": model.quant.exempt_last_layer,
        },
        "seed": model.seed,
        "layers": [s.to_dict() for s in model.specs],
        "tensors": [{"role": r, "name": k, "shape": list(v.shape)} for r, k, v in tensors],
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for _, _, v in tensors)
    body = _PREFIX.pack(MAGIC, VERSION, len(head)) + head + blob
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(buf: bytes) -> tuple[Model, dict]:
    """Returns ``(model, header)``."""
    if len(buf) < _PREFIX.size + DIGEST_LEN:
        raise FormatError("checkpoint truncated", offset=len(buf))
    magic, version, head_len = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    body, digest = buf[:-DIGEST_LEN], buf[-DIGEST_LEN:]
    if hashlib.sha256(body).digest() != digest:
        raise FormatError("checkpoint digest mismatch (corrupted file)", offset=len(body))
    start = _PREFIX.size
    try:
        header = json.loads(body[start:start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable checkpoint header: {e}", offset=start) from None
    pos = start + head_len
    params, buffers = {}, {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        end = pos + 4 * count
        if end > len(body):
            raise FormatError(f"tensor {t['name']} runs past the end of the blob", offset=pos)
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=pos).reshape(t["shape"])
        (params if t["role"] == "param" else buffers)[t["name"]] = arr.astype(np.float32)
        pos = end
    if pos != len(body):
        raise FormatError("trailing bytes after parameter blob", offset=pos)
    model = Model([LayerSpec.from_dict(d) for d in header["layers"]], header["input_shape"],
                  quant=QuantConfig(**header["quant"]), params=params, buffers=buffers,
                  model_id=header["model_id"], dataset_id=header["dataset_id"], seed=header["seed"])
    return model, header


def save_checkpoint(path, model: Model, meta: dict | None = None) -> str:
    """Write atomically; returns the hex content digest."""
    data = encode_checkpoint(model, meta)
    atomic_write(path, data)
    return data[-DIGEST_LEN:].hex()


def load_checkpoint(path) -> Model:
    return decode_checkpoint(Path(path).read_bytes())[0]


def load_checkpoint_with_header(path) -> tuple[Model, dict]:
    return decode_checkpoint(Path(path).read_bytes())


def checkpoint_digest(path) -> str:
    data = Path(path).read_bytes()
    return data[-DIGEST_LEN:].hex()
