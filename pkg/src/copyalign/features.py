"""Frame-feature sequences and their on-disk formats.

A sequence is an (M, W) float32 matrix of per-frame feature vectors plus
per-frame timestamps in seconds. The binary format ("VSFQ") is:

    magic "VSFQ" | version u16 | M u32 | W u32 | fps f32
    | M*W float32 row-major frame data | M float64 timestamps

all little-endian. A CSV with one comma-separated frame per line is also
accepted on import (timestamps are then derived from the frame rate).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DegenerateInputError, DimensionError

FEATURE_MAGIC = b"VSFQ"
FEATURE_VERSION = 1

_HEADER = struct.Struct("<4sHIIf")


@dataclass
class FeatureSequence:
    """Per-frame feature vectors with timestamps."""

    frames: np.ndarray
    timestamps: np.ndarray
    fps: float = 1.0

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        self.timestamps = np.ascontiguousarray(self.timestamps, dtype=np.float64)
        if self.frames.ndim != 2:
            raise DimensionError(f"frames must be 2-D, got shape {self.frames.shape}")
        if self.timestamps.shape != (self.frames.shape[0],):
            raise DimensionError(
                f"{self.frames.shape[0]} frames but {self.timestamps.shape[0]} timestamps"
            )
        if self.frames.shape[0] > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise DataError("timestamps must be strictly increasing")

    @classmethod
    def from_frames(cls, frames, fps: float = 1.0) -> "FeatureSequence":
        frames = np.asarray(frames, dtype=np.float32)
        timestamps = np.arange(frames.shape[0], dtype=np.float64) / fps
        return cls(frames, timestamps, fps)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class SimilarityMatrix:
    """Frame-pair cosine similarities between two sequences."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise DimensionError(f"similarity matrix must be 2-D, got {self.values.shape}")

    @property
    def row_count(self) -> int:
        return self.values.shape[0]

    @property
    def col_count(self) -> int:
        return self.values.shape[1]


def normalize_rows(frames: np.ndarray) -> np.ndarray:
    """Scale each row to unit Euclidean norm; zero rows are an error."""
    frames = np.asarray(frames, dtype=np.float32)
    norms = np.linalg.norm(frames, axis=1)
    bad = np.nonzero(norms < 1e-12)[0]
    if bad.size:
        raise DegenerateInputError(f"row {int(bad[0])} has zero norm")
    return frames / norms[:, None]


def l2_normalize(seq: FeatureSequence) -> FeatureSequence:
    return FeatureSequence(normalize_rows(seq.frames), seq.timestamps, seq.fps)


def write_feature_file(path, seq: FeatureSequence) -> None:
    path = Path(path)
    m, w = seq.frames.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, m, w, seq.fps))
        fh.write(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(seq.timestamps, dtype="<f8").tobytes())


def read_feature_file(path) -> FeatureSequence:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated feature file")
    magic, version, m, w, fps = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if version != FEATURE_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    offset = _HEADER.size
    frame_bytes = m * w * 4
    ts_bytes = m * 8
    if len(raw) != offset + frame_bytes + ts_bytes:
        raise DataError(f"{path}: size mismatch for {m}x{w} sequence")
    frames = np.frombuffer(raw, dtype="<f4", count=m * w, offset=offset).reshape(m, w)
    timestamps = np.frombuffer(raw, dtype="<f8", count=m, offset=offset + frame_bytes)
    return FeatureSequence(frames.copy(), timestamps.copy(), float(fps))


def read_feature_csv(path, fps: float = 1.0) -> FeatureSequence:
    """One frame per line, comma-separated floats."""
    path = Path(path)
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(tok) for tok in line.split(",")]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} values, got {len(row)}")
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no frames found")
    return FeatureSequence.from_frames(np.array(rows, dtype=np.float32), fps)


def load_features(path, fps: float = 1.0) -> FeatureSequence:
    """Load a feature file, sniffing between the binary format and CSV."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == FEATURE_MAGIC:
        return read_feature_file(path)
    return read_feature_csv(path, fps)
