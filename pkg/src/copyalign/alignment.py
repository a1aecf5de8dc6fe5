"""Alignment-path extraction and spatio-temporal scoring.

Start points are cells of the temporal-similarity map above a threshold;
from each start (smallest i+j first) a walk follows the direction map
(0 diagonal, 1 right, 2 down), collecting cells whose combined
similarity s*t clears a floor and ending at the matrix edge or after
three consecutive misses. Visited cells and their 8-neighborhoods are
retired as start candidates so each alignment is found once.

A sigmoid soft weight in the shorter covered span scores longer paths
higher; the hard-weight alternative simply drops paths spanning fewer
than three frames. A classic offset-histogram (Hough) aligner is kept as
a baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import SequenceEncoderParams, encode_sequence, spatial_similarity
from .errors import DimensionError
from .features import FeatureSequence, SimilarityMatrix, l2_normalize
from .model import MaskMap, MaskStepParams, StepMap, predict_maps


@dataclass
class AlignConfig:
    """Thresholds and mode switches for alignment and scoring.

    tau: start-point threshold on the mask map; sigma: floor on the
    combined similarity s*t; gamma: soft-weight temperature; gap_limit:
    consecutive misses before a walk stops; hard_min_len: minimum span
    kept in hard-weight mode.
    """

    tau: float = 0.3
    sigma: float = 0.1
    gamma: float = 100.0
    gap_limit: int = 3
    weighting: str = "soft"
    hard_min_len: int = 3
    hv_threshold: float = 0.5
    hv_min_votes: int = 3


@dataclass
class AlignmentPath:
    """One detected alignment: its cells plus derived segments and score."""

    pairs: list
    k: int = 0
    segment_u: tuple | None = None
    segment_v: tuple | None = None
    weight: float | None = None
    score: float | None = None


STEP_DELTAS = {0: (1, 1), 1: (0, 1), 2: (1, 0)}


def partial_align(S: np.ndarray, T: np.ndarray, D: np.ndarray,
                  cfg: AlignConfig | None = None,
                  start_map: np.ndarray | None = None) -> list[AlignmentPath]:
    """Walk out every alignment path reachable from the start-point set.

    ``start_map`` defaults to T; passing S instead gives the mask-free
    mode where start points come from raw similarity.
    """
    cfg = cfg or AlignConfig()
    S = np.asarray(S)
    T = np.asarray(T)
    D = np.asarray(D)
    m, n = S.shape
    if T.shape != (m, n):
        raise DimensionError(f"similarity {S.shape} and mask {T.shape} differ")
    if D.shape != (m - 1, n - 1):
        raise DimensionError(
            f"direction map {D.shape} must be {(m - 1, n - 1)} for {S.shape} input"
        )
    if start_map is None:
        start_map = T
    elif start_map.shape != (m, n):
        raise DimensionError(f"start map {start_map.shape} does not match {S.shape}")

    candidates = start_map > cfg.tau
    paths: list[AlignmentPath] = []
    while candidates.any():
        active = np.argwhere(candidates)
        order = np.lexsort((active[:, 1], active[:, 0], active.sum(axis=1)))
        i, j = (int(v) for v in active[order[0]])
        pairs = []
        gap = 0
        while True:
            if S[i, j] * T[i, j] < cfg.sigma:
                gap += 1
            else:
                pairs.append((i, j))
                gap = 0
            candidates[max(0, i - 1):i + 2, max(0, j - 1):j + 2] = False
            if gap >= cfg.gap_limit:
                break
            if i >= m - 1 or j >= n - 1:
                break
            di, dj = STEP_DELTAS[int(D[i, j])]
            i += di
            j += dj
        if pairs:
            paths.append(AlignmentPath(pairs=pairs, k=len(paths) + 1))
    return paths


def shorter_span(pairs) -> int:
    """Length of the shorter of the two segments covered, in frames."""
    rows = [i for i, _ in pairs]
    cols = [j for _, j in pairs]
    return min(max(rows) - min(rows) + 1, max(cols) - min(cols) + 1)


def soft_weight(path_or_span, gamma: float = 100.0) -> float:
    """Length-based confidence 1 / (1 + gamma * exp(-span)), in (0, 1)."""
    if isinstance(path_or_span, AlignmentPath):
        span = shorter_span(path_or_span.pairs)
    else:
        span = float(path_or_span)
    return 1.0 / (1.0 + gamma * math.exp(-span))


def weight_filter(paths: list[AlignmentPath], cfg: AlignConfig) -> list[AlignmentPath]:
    """Assign confidence weights; hard mode drops short paths instead."""
    kept = []
    for path in paths:
        span = shorter_span(path.pairs)
        if cfg.weighting == "hard":
            if span < cfg.hard_min_len:
                continue
            path.weight = 1.0
        else:
            path.weight = soft_weight(span, cfg.gamma)
        kept.append(path)
    return kept


def score_path(path: AlignmentPath, S: np.ndarray, T: np.ndarray,
               weight: float | None = None) -> float:
    """Weighted mean of s*t over the path's cells."""
    if not path.pairs:
        raise DimensionError("cannot score an empty path")
    if weight is None:
        weight = path.weight if path.weight is not None else 1.0
    total = sum(float(S[i, j]) * float(T[i, j]) for i, j in path.pairs)
    path.score = weight * total / len(path.pairs)
    return path.score


def segments_from_path(path: AlignmentPath, fps_u: float = 1.0,
                       fps_v: float = 1.0) -> tuple:
    """Segment pair in seconds spanned by the path's min/max frame indices."""
    if not path.pairs:
        raise DimensionError("cannot derive segments from an empty path")
    rows = [i for i, _ in path.pairs]
    cols = [j for _, j in path.pairs]
    path.segment_u = (min(rows) / fps_u, max(rows) / fps_u)
    path.segment_v = (min(cols) / fps_v, max(cols) / fps_v)
    return path.segment_u, path.segment_v


def hough_voting_align(S: np.ndarray, sim_threshold: float = 0.5,
                       vote_min: int = 3) -> list[AlignmentPath]:
    """Offset-histogram baseline: constant-lag bands of similar frame pairs.

    Every frame pair above the threshold votes for its lag j - i; lags are
    taken in descending vote order and each emits one path of the still
    unclaimed matches within one lag of it, ordered by row.
    """
    S = np.asarray(S)
    matches = np.argwhere(S >= sim_threshold)
    if matches.size == 0:
        return []
    lags = matches[:, 1] - matches[:, 0]
    votes: dict[int, int] = {}
    for lag in lags:
        votes[int(lag)] = votes.get(int(lag), 0) + 1
    claimed = np.zeros(len(matches), dtype=bool)
    paths = []
    for lag in sorted(votes, key=lambda l: (-votes[l], abs(l), l)):
        in_band = np.abs(lags - lag) <= 1
        take = in_band & ~claimed
        if int(take.sum()) < vote_min:
            continue
        selected = matches[take]
        order = np.lexsort((selected[:, 1], selected[:, 0]))
        pairs = [(int(i), int(j)) for i, j in selected[order]]
        claimed |= take
        paths.append(AlignmentPath(pairs=pairs, k=len(paths) + 1))
    return paths


@dataclass
class Detection:
    """A scored copied-segment hypothesis between a query and a reference."""

    query_segment: tuple
    ref_segment: tuple
    score: float
    path: AlignmentPath


def detect(query: FeatureSequence, reference: FeatureSequence,
           encoder_params: SequenceEncoderParams | None,
           model_params: MaskStepParams | None,
           cfg: AlignConfig | None = None, *,
           aligner: str = "sm", use_mask: bool = True) -> list[Detection]:
    """Full pipeline: normalize, encode, similarity, maps, align, score.

    ``aligner`` selects the learned walker ("sm") or the Hough baseline
    ("hv"); ``use_mask`` toggles the temporal-similarity factor (off, the
    walker seeds from raw similarity and scores with t == 1).
    """
    cfg = cfg or AlignConfig()
    u = l2_normalize(query)
    v = l2_normalize(reference)
    if encoder_params is not None:
        u = encode_sequence(u, encoder_params)
        v = encode_sequence(v, encoder_params)
    S = spatial_similarity(u, v).values

    if aligner == "hv":
        paths = hough_voting_align(S, cfg.hv_threshold, cfg.hv_min_votes)
        T = np.ones_like(S)
    elif aligner == "sm":
        if model_params is None:
            raise DimensionError("the learned aligner needs trained model parameters")
        mask, step = predict_maps(SimilarityMatrix(S), model_params)
        if use_mask:
            T = mask.values
            paths = partial_align(S, T, step.categories, cfg)
        else:
            T = np.ones_like(S)
            paths = partial_align(S, T, step.categories, cfg, start_map=S)
    else:
        raise DimensionError(f"unknown aligner {aligner!r}")

    paths = weight_filter(paths, cfg)
    detections = []
    for path in paths:
        score_path(path, S, T)
        segments_from_path(path, query.fps, reference.fps)
        detections.append(Detection(
            query_segment=path.segment_u,
            ref_segment=path.segment_v,
            score=path.score,
            path=path,
        ))
    detections.sort(key=lambda d: (-d.score, d.query_segment, d.ref_segment))
    return detections
