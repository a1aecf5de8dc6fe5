"""Binary checkpoint format ("VSCK").

Layout, all little-endian:

    magic "VSCK" | version u16 | meta_len u32 | meta JSON (utf-8)
    | tensor_count u32
    | per tensor: name_len u16 | name utf-8 | ndim u8 | ndim * u32 dims
                  | float32 data, row-major

The metadata JSON records the RNG seed, the training schedule, and the
encoder configuration so a checkpoint is self-describing. Writing is
canonical (sorted JSON keys, fixed parameter order), so identical
parameters produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import Parameter
from .encoder import SequenceEncoderParams
from .errors import DataError
from .model import MaskStepParams

CHECKPOINT_MAGIC = b"VSCK"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    encoder: SequenceEncoderParams | None
    model: MaskStepParams
    metadata: dict


def _collect(encoder: SequenceEncoderParams | None, model: MaskStepParams):
    params = []
    if encoder is not None:
        params.extend(encoder.parameters())
    params.extend(model.parameters())
    return params


def save_checkpoint(path, encoder: SequenceEncoderParams | None,
                    model: MaskStepParams, metadata: dict) -> None:
    path = Path(path)
    meta = dict(metadata)
    meta["encoder_enabled"] = encoder is not None
    if encoder is not None:
        meta["encoder_model_dim"] = encoder.model_dim
        meta["encoder_head_count"] = encoder.head_count
        meta["encoder_hidden_dim"] = encoder.hidden_dim
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    params = _collect(encoder, model)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            name = p.name.encode()
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            shape = p.data.shape
            fh.write(struct.pack("<B", len(shape)))
            for dim in shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    view = memoryview(raw)
    offset = 0

    def take(n: int) -> memoryview:
        nonlocal offset
        if offset + n > len(raw):
            raise DataError(f"{path}: truncated checkpoint")
        chunk = view[offset:offset + n]
        offset += n
        return chunk

    if bytes(take(4)) != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: bad checkpoint magic")
    (version,) = struct.unpack("<H", take(2))
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", take(4))
    try:
        metadata = json.loads(bytes(take(meta_len)).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint metadata: {exc}") from exc
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(size * 4), dtype="<f4").reshape(shape).copy()
        tensors[name] = data
    if offset != len(raw):
        raise DataError(f"{path}: trailing bytes in checkpoint")

    encoder = None
    if metadata.get("encoder_enabled"):
        encoder = SequenceEncoderParams.create(
            np.random.default_rng(0),
            model_dim=int(metadata["encoder_model_dim"]),
            head_count=int(metadata["encoder_head_count"]),
            hidden_dim=int(metadata["encoder_hidden_dim"]),
        )
        _restore(encoder.parameters(), tensors, path)
    model = MaskStepParams.create(np.random.default_rng(0))
    _restore(model.parameters(), tensors, path)
    return Checkpoint(encoder=encoder, model=model, metadata=metadata)


def _restore(params: list[Parameter], tensors: dict, path) -> None:
    for p in params:
        if p.name not in tensors:
            raise DataError(f"{path}: checkpoint is missing tensor {p.name!r}")
        stored = tensors[p.name]
        if stored.shape != p.data.shape:
            raise DataError(
                f"{path}: tensor {p.name!r} has shape {stored.shape}, "
                f"expected {p.data.shape}"
            )
        p.tensor.data = stored.astype(np.float32)
        p.momentum = np.zeros_like(p.tensor.data)
