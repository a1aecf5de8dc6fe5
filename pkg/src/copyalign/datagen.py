"""Self-supervised training-pair fabrication.

Base material is sampled at 2 fps; a temporal transform (speed change,
freeze, deletion, or plain rate reduction) brings a sequence down to the
default 1 fps while tracing every output frame back to its source frame.
Two independently transformed copies of one base form an anchor/positive
pair, and the shared source ids define the ground-truth match set from
which the mask and step labels are derived exactly.

Feature-space perturbation (additive Gaussian noise plus row
renormalization) stands in for image-level edits, since features arrive
pre-extracted here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, GenerationError
from .features import FeatureSequence, normalize_rows

TRANSFORM_KINDS = ("speed", "freeze", "delete", "identity")
SPEED_GRID = (0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)
PAIR_LENGTH = 16
MIN_SHARED_ORIGINS = 4
MAX_FREEZE_COPIES = 4
MAX_DELETE_FRAMES = 4
MIN_RAW_FRAMES = 8

PAD_ORIGIN = -1  # padding frames never participate in the match set


@dataclass
class TracedSequence:
    """Frames plus the raw 2-fps frame index each of them came from."""

    frames: np.ndarray
    origin_ids: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        self.origin_ids = np.asarray(self.origin_ids, dtype=np.int64)
        if self.frames.shape[0] != self.origin_ids.shape[0]:
            raise DimensionError("frames and origin_ids lengths differ")
        if self.origin_ids.size > 1 and np.any(np.diff(self.origin_ids) < 0):
            raise GenerationError("origin ids must be non-decreasing")

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class MatchSet:
    """Ground-truth matched index pairs between anchor and positive."""

    pairs: set
    anchor_len: int
    positive_len: int


@dataclass
class StepTargets:
    """Positions responsible for direction supervision and their targets.

    ``responsible`` holds (i, j, l) triples; ``probs`` maps each triple to
    its target probability d in {0.5, 1.0}. The grid is one smaller than
    the mask grid on both axes.
    """

    responsible: set
    probs: dict
    rows: int
    cols: int

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((3, self.rows, self.cols), dtype=np.float32)
        for (i, j, l), d in self.probs.items():
            dense[l, i, j] = d
        return dense


@dataclass
class TrainingPair:
    anchor: FeatureSequence
    positive: FeatureSequence
    match_set: MatchSet
    mask_label: np.ndarray
    step_targets: StepTargets
    anchor_kind: str = "identity"
    positive_kind: str = "identity"


# ---------------------------------------------------------------------------
# Base material


def synth_base_sequence(rng: np.random.Generator, length: int, dim: int,
                        correlation: float = 0.8) -> TracedSequence:
    """Unit-norm Gaussian frames with AR(1) drift between consecutive frames."""
    frames = np.empty((length, dim), dtype=np.float32)
    current = rng.standard_normal(dim)
    current /= np.linalg.norm(current)
    frames[0] = current
    blend = np.sqrt(max(1.0 - correlation * correlation, 0.0))
    for t in range(1, length):
        step = rng.standard_normal(dim)
        step /= np.linalg.norm(step)
        current = correlation * current + blend * step
        current /= np.linalg.norm(current)
        frames[t] = current
    return TracedSequence(frames, np.arange(length))


# ---------------------------------------------------------------------------
# Temporal transforms (all preserve provenance)


def reduce_to_1fps(raw: TracedSequence) -> TracedSequence:
    """Drop every other frame: 2 fps raw material to the default 1 fps."""
    return TracedSequence(raw.frames[::2].copy(), raw.origin_ids[::2].copy())


def speed_transform(raw: TracedSequence, rate: float) -> TracedSequence:
    """Resample to play ``rate`` times faster than the default 1 fps.

    Output frame k comes from raw frame floor(k * 2 * rate); rate 1.0
    keeps every other raw frame, rate 2.0 keeps every fourth.
    """
    stride = 2.0 * rate
    if stride < 1.0:
        raise GenerationError(f"speed {rate} below the 0.5x floor of 2 fps material")
    count = int(np.floor((len(raw) - 1) / stride)) + 1
    idx = np.floor(np.arange(count) * stride).astype(np.int64)
    return TracedSequence(raw.frames[idx].copy(), raw.origin_ids[idx].copy())


def freeze_transform(seq: TracedSequence, frame_idx: int, copies: int) -> TracedSequence:
    """Duplicate one frame ``copies`` extra times, in place in the timeline."""
    if not 0 <= frame_idx < len(seq):
        raise GenerationError(f"freeze index {frame_idx} out of range")
    frames = np.insert(seq.frames, [frame_idx] * copies, seq.frames[frame_idx], axis=0)
    origins = np.insert(seq.origin_ids, [frame_idx] * copies, seq.origin_ids[frame_idx])
    return TracedSequence(frames, origins)


def delete_transform(seq: TracedSequence, start: int, count: int) -> TracedSequence:
    """Remove ``count`` consecutive frames starting at ``start``."""
    if not 0 <= start <= len(seq) - count:
        raise GenerationError(f"delete window [{start}, {start + count}) out of range")
    keep = np.concatenate([np.arange(start), np.arange(start + count, len(seq))])
    return TracedSequence(seq.frames[keep].copy(), seq.origin_ids[keep].copy())


def temporal_transform(raw: TracedSequence, kind: str,
                       rng: np.random.Generator) -> TracedSequence:
    """Apply one named transform to 2-fps raw material, yielding ~1 fps output."""
    if len(raw) < MIN_RAW_FRAMES:
        raise GenerationError(
            f"raw sequence has {len(raw)} frames; at least {MIN_RAW_FRAMES} required"
        )
    if kind == "identity":
        return reduce_to_1fps(raw)
    if kind == "speed":
        rate = float(rng.choice(SPEED_GRID))
        return speed_transform(raw, rate)
    if kind == "freeze":
        seq = reduce_to_1fps(raw)
        frame_idx = int(rng.integers(0, len(seq)))
        copies = int(rng.integers(1, MAX_FREEZE_COPIES + 1))
        return freeze_transform(seq, frame_idx, copies)
    if kind == "delete":
        seq = reduce_to_1fps(raw)
        count = int(rng.integers(1, MAX_DELETE_FRAMES + 1))
        count = min(count, max(len(seq) - MIN_SHARED_ORIGINS, 1))
        start = int(rng.integers(0, len(seq) - count + 1))
        return delete_transform(seq, start, count)
    raise GenerationError(f"unknown transform kind {kind!r}")


# ---------------------------------------------------------------------------
# Feature-space perturbation


def perturb_rows(frames: np.ndarray, strength: float,
                 rng: np.random.Generator) -> np.ndarray:
    if strength < 0:
        raise GenerationError(f"perturbation strength must be >= 0, got {strength}")
    if strength == 0:
        return frames.copy()
    noisy = frames + rng.normal(0.0, strength, size=frames.shape)
    return normalize_rows(noisy.astype(np.float32))


def feature_perturb(seq: FeatureSequence, strength: float,
                    rng: np.random.Generator) -> FeatureSequence:
    """Additive Gaussian noise per component, then row renormalization."""
    return FeatureSequence(perturb_rows(seq.frames, strength, rng),
                           seq.timestamps, seq.fps)


# ---------------------------------------------------------------------------
# Labels


def match_set_from_origins(anchor_origins: np.ndarray,
                           positive_origins: np.ndarray) -> MatchSet:
    pairs = set()
    for i, oa in enumerate(anchor_origins):
        if oa == PAD_ORIGIN:
            continue
        for j, op in enumerate(positive_origins):
            if oa == op:
                pairs.add((i, j))
    return MatchSet(pairs, len(anchor_origins), len(positive_origins))


def mask_label(match_set: MatchSet) -> np.ndarray:
    """Binary indicator map of the match set."""
    label = np.zeros((match_set.anchor_len, match_set.positive_len), dtype=np.uint8)
    for i, j in match_set.pairs:
        label[i, j] = 1
    return label


def step_label(match_set: MatchSet) -> StepTargets:
    """Direction supervision targets.

    A position (i, j) is responsible when one of its forward neighbors is
    matched. Diagonal (category 0) is the prior option and excludes the
    lateral categories; when only right (1) and down (2) both apply they
    split the probability 0.5/0.5, so targets always sum to 1 per
    responsible position.
    """
    pairs = match_set.pairs
    rows = match_set.anchor_len - 1
    cols = match_set.positive_len - 1
    responsible = set()
    probs = {}
    for i in range(rows):
        for j in range(cols):
            if (i + 1, j + 1) in pairs:
                responsible.add((i, j, 0))
                probs[(i, j, 0)] = 1.0
                continue
            right = (i, j + 1) in pairs
            down = (i + 1, j) in pairs
            if right and down:
                responsible.add((i, j, 1))
                responsible.add((i, j, 2))
                probs[(i, j, 1)] = 0.5
                probs[(i, j, 2)] = 0.5
            elif right:
                responsible.add((i, j, 1))
                probs[(i, j, 1)] = 1.0
            elif down:
                responsible.add((i, j, 2))
                probs[(i, j, 2)] = 1.0
    return StepTargets(responsible, probs, rows, cols)


# ---------------------------------------------------------------------------
# Pair assembly


def _fit_to_length(traced_frames: np.ndarray, origins: np.ndarray, length: int,
                   rng: np.random.Generator,
                   distractors: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Trim to a random window, or pad with distractor frames (origin -1)."""
    n = traced_frames.shape[0]
    if n > length:
        start = int(rng.integers(0, n - length + 1))
        return (traced_frames[start:start + length].copy(),
                origins[start:start + length].copy())
    if n == length:
        return traced_frames.copy(), origins.copy()
    pad = length - n
    front = int(rng.integers(0, pad + 1))
    back = pad - front
    if distractors is not None and distractors.shape[0] > 0:
        idx = rng.integers(0, distractors.shape[0], size=pad)
        filler = distractors[idx]
    else:
        filler = normalize_rows(
            rng.standard_normal((pad, traced_frames.shape[1])).astype(np.float32))
    frames = np.concatenate([filler[:front], traced_frames, filler[front:]])
    padded_origins = np.concatenate([
        np.full(front, PAD_ORIGIN, dtype=np.int64),
        origins,
        np.full(back, PAD_ORIGIN, dtype=np.int64),
    ])
    return frames, padded_origins


def _shared_origin_count(anchor_origins: np.ndarray, positive_origins: np.ndarray) -> int:
    a = set(int(o) for o in anchor_origins if o != PAD_ORIGIN)
    p = set(int(o) for o in positive_origins if o != PAD_ORIGIN)
    return len(a & p)


def make_training_pair(base: TracedSequence, rng: np.random.Generator, *,
                       length: int = PAIR_LENGTH,
                       perturb_strength: float = 0.1,
                       distractors: np.ndarray | None = None,
                       max_attempts: int = 64) -> TrainingPair:
    """Transform one base twice into an anchor/positive pair with labels.

    Each side independently draws a temporal transform, gets perturbed in
    feature space, and is trimmed or padded to the target length. Draws
    that leave fewer than four original frames matched are rejected and
    redrawn; running out of attempts raises.
    """
    for _ in range(max_attempts):
        kind_a = str(rng.choice(TRANSFORM_KINDS))
        kind_p = str(rng.choice(TRANSFORM_KINDS))
        traced_a = temporal_transform(base, kind_a, rng)
        traced_p = temporal_transform(base, kind_p, rng)
        frames_a = perturb_rows(traced_a.frames, perturb_strength, rng)
        frames_p = perturb_rows(traced_p.frames, perturb_strength, rng)
        frames_a, origins_a = _fit_to_length(frames_a, traced_a.origin_ids, length,
                                             rng, distractors)
        frames_p, origins_p = _fit_to_length(frames_p, traced_p.origin_ids, length,
                                             rng, distractors)
        if _shared_origin_count(origins_a, origins_p) < MIN_SHARED_ORIGINS:
            continue
        match_set = match_set_from_origins(origins_a, origins_p)
        return TrainingPair(
            anchor=FeatureSequence.from_frames(frames_a),
            positive=FeatureSequence.from_frames(frames_p),
            match_set=match_set,
            mask_label=mask_label(match_set),
            step_targets=step_label(match_set),
            anchor_kind=kind_a,
            positive_kind=kind_p,
        )
    raise GenerationError(
        f"no pair with >= {MIN_SHARED_ORIGINS} matched frames after {max_attempts} attempts"
    )


def make_negative_pair(base_a: TracedSequence, base_b: TracedSequence,
                       rng: np.random.Generator, *,
                       length: int = PAIR_LENGTH,
                       perturb_strength: float = 0.1,
                       distractors: np.ndarray | None = None
                       ) -> tuple[FeatureSequence, FeatureSequence]:
    """Two unrelated bases put through the same pipeline; no shared content."""
    seqs = []
    for base in (base_a, base_b):
        kind = str(rng.choice(TRANSFORM_KINDS))
        traced = temporal_transform(base, kind, rng)
        frames = perturb_rows(traced.frames, perturb_strength, rng)
        frames, _ = _fit_to_length(frames, traced.origin_ids, length, rng, distractors)
        seqs.append(FeatureSequence.from_frames(frames))
    return seqs[0], seqs[1]


def pair_seed(base_seed: int, pair_index: int) -> int:
    """Derived per-pair seed; keeps parallel generation deterministic."""
    return int(base_seed) ^ int(pair_index)


def ground_truth_box(match_set: MatchSet, fps: float = 1.0):
    """Segment pair (in seconds) spanned by the match set on both axes."""
    rows = [i for i, _ in match_set.pairs]
    cols = [j for _, j in match_set.pairs]
    return ((min(rows) / fps, max(rows) / fps), (min(cols) / fps, max(cols) / fps))
