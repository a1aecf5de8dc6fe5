"""Dataset directory layout and (de)serialization.

    <root>/
      manifest.json          generation parameters and transform counts
      annotations.json       ground-truth segments for held-out positives
      train/
        pair_00000_anchor.vsfq
        pair_00000_positive.vsfq
        pair_00000_labels.json
      heldout/
        pos_00000_query.vsfq   pos_00000_ref.vsfq   pos_00000_labels.json
        neg_00000_query.vsfq   neg_00000_ref.vsfq

Labels files hold the matched index pairs and the step-supervision
records (i, j, l, d). Everything is written deterministically (sorted
records, canonical JSON) so identical seeds give identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datagen import (MatchSet, StepTargets, TracedSequence, TrainingPair,
                      ground_truth_box, make_negative_pair, make_training_pair,
                      mask_label, pair_seed, synth_base_sequence)
from .errors import ConfigError, DataError
from .features import FeatureSequence, read_feature_file, write_feature_file

MANIFEST_NAME = "manifest.json"
ANNOTATIONS_NAME = "annotations.json"

# Disjoint per-pair seed offsets for the three pair populations.
TRAIN_INDEX_BASE = 0
HELDOUT_INDEX_BASE = 1_000_000
NEGATIVE_INDEX_BASE = 2_000_000

DISTRACTOR_POOL_BASES = 64


def _dump_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _labels_payload(pair: TrainingPair) -> dict:
    records = sorted(
        [int(i), int(j), int(l), float(d)]
        for (i, j, l), d in pair.step_targets.probs.items()
    )
    return {
        "anchor_len": pair.match_set.anchor_len,
        "positive_len": pair.match_set.positive_len,
        "match_pairs": sorted([int(i), int(j)] for i, j in pair.match_set.pairs),
        "step_targets": records,
        "anchor_kind": pair.anchor_kind,
        "positive_kind": pair.positive_kind,
    }


def _pair_from_labels(anchor: FeatureSequence, positive: FeatureSequence,
                      payload: dict) -> TrainingPair:
    match_set = MatchSet(
        pairs={(int(i), int(j)) for i, j in payload["match_pairs"]},
        anchor_len=int(payload["anchor_len"]),
        positive_len=int(payload["positive_len"]),
    )
    probs = {(int(i), int(j), int(l)): float(d)
             for i, j, l, d in payload["step_targets"]}
    targets = StepTargets(
        responsible=set(probs),
        probs=probs,
        rows=match_set.anchor_len - 1,
        cols=match_set.positive_len - 1,
    )
    return TrainingPair(
        anchor=anchor, positive=positive, match_set=match_set,
        mask_label=mask_label(match_set), step_targets=targets,
        anchor_kind=payload.get("anchor_kind", "identity"),
        positive_kind=payload.get("positive_kind", "identity"),
    )


@dataclass
class GenerationSpec:
    pairs: int
    heldout: int = 0
    negatives: int = 0
    seed: int = 7
    feature_dim: int = 32
    sequence_length: int = 16
    raw_length: int = 36
    correlation: float = 0.8
    perturb_strength: float = 0.1


def _distractor_pool(spec: GenerationSpec) -> np.ndarray:
    """Frames from unrelated bases, used to pad short sequences."""
    rng = np.random.default_rng(pair_seed(spec.seed, 0xD157_AC70))
    frames = [
        synth_base_sequence(rng, spec.raw_length, spec.feature_dim,
                            spec.correlation).frames
        for _ in range(DISTRACTOR_POOL_BASES)
    ]
    return np.concatenate(frames)


def generate_pair(spec: GenerationSpec, index: int,
                  distractors: np.ndarray) -> TrainingPair:
    rng = np.random.default_rng(pair_seed(spec.seed, index))
    base = synth_base_sequence(rng, spec.raw_length, spec.feature_dim,
                               spec.correlation)
    return make_training_pair(
        base, rng, length=spec.sequence_length,
        perturb_strength=spec.perturb_strength, distractors=distractors)


def generate_negative(spec: GenerationSpec, index: int,
                      distractors: np.ndarray):
    rng = np.random.default_rng(pair_seed(spec.seed, index))
    base_a = synth_base_sequence(rng, spec.raw_length, spec.feature_dim,
                                 spec.correlation)
    base_b = synth_base_sequence(rng, spec.raw_length, spec.feature_dim,
                                 spec.correlation)
    return make_negative_pair(
        base_a, base_b, rng, length=spec.sequence_length,
        perturb_strength=spec.perturb_strength, distractors=distractors)


def write_dataset(root, spec: GenerationSpec) -> dict:
    """Generate and persist a full dataset; returns the manifest."""
    if spec.pairs <= 0:
        raise ConfigError(f"pair count must be positive, got {spec.pairs}")
    root = Path(root)
    train_dir = root / "train"
    heldout_dir = root / "heldout"
    train_dir.mkdir(parents=True, exist_ok=True)
    if spec.heldout or spec.negatives:
        heldout_dir.mkdir(parents=True, exist_ok=True)

    distractors = _distractor_pool(spec)
    transform_counts = {kind: 0 for kind in ("speed", "freeze", "delete", "identity")}

    for idx in range(spec.pairs):
        pair = generate_pair(spec, TRAIN_INDEX_BASE + idx, distractors)
        stem = train_dir / f"pair_{idx:05d}"
        write_feature_file(f"{stem}_anchor.vsfq", pair.anchor)
        write_feature_file(f"{stem}_positive.vsfq", pair.positive)
        _dump_json(Path(f"{stem}_labels.json"), _labels_payload(pair))
        transform_counts[pair.anchor_kind] += 1
        transform_counts[pair.positive_kind] += 1

    annotations = []
    for idx in range(spec.heldout):
        pair = generate_pair(spec, HELDOUT_INDEX_BASE + idx, distractors)
        stem = heldout_dir / f"pos_{idx:05d}"
        write_feature_file(f"{stem}_query.vsfq", pair.anchor)
        write_feature_file(f"{stem}_ref.vsfq", pair.positive)
        _dump_json(Path(f"{stem}_labels.json"), _labels_payload(pair))
        transform_counts[pair.anchor_kind] += 1
        transform_counts[pair.positive_kind] += 1
        (q_seg, r_seg) = ground_truth_box(pair.match_set)
        annotations.append({
            "query_id": f"pos_{idx:05d}.query",
            "ref_id": f"pos_{idx:05d}.ref",
            "q_start": q_seg[0], "q_end": q_seg[1],
            "r_start": r_seg[0], "r_end": r_seg[1],
        })

    for idx in range(spec.negatives):
        query, ref = generate_negative(spec, NEGATIVE_INDEX_BASE + idx, distractors)
        stem = heldout_dir / f"neg_{idx:05d}"
        write_feature_file(f"{stem}_query.vsfq", query)
        write_feature_file(f"{stem}_ref.vsfq", ref)

    if spec.heldout:
        _dump_json(root / ANNOTATIONS_NAME, annotations)

    manifest = {
        "version": 1,
        "seed": spec.seed,
        "feature_dim": spec.feature_dim,
        "sequence_length": spec.sequence_length,
        "raw_length": spec.raw_length,
        "correlation": spec.correlation,
        "perturb_strength": spec.perturb_strength,
        "train_pairs": spec.pairs,
        "heldout_pairs": spec.heldout,
        "negative_pairs": spec.negatives,
        "transform_counts": transform_counts,
    }
    _dump_json(root / MANIFEST_NAME, manifest)
    return manifest


def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"{path}: dataset manifest not found")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: corrupt manifest: {exc}") from exc


def load_training_pairs(root) -> list[TrainingPair]:
    root = Path(root)
    train_dir = root / "train"
    if not train_dir.is_dir():
        raise DataError(f"{train_dir}: training split not found")
    pairs = []
    for labels_path in sorted(train_dir.glob("pair_*_labels.json")):
        stem = labels_path.name[:-len("_labels.json")]
        try:
            payload = json.loads(labels_path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{labels_path}: corrupt labels: {exc}") from exc
        anchor = read_feature_file(train_dir / f"{stem}_anchor.vsfq")
        positive = read_feature_file(train_dir / f"{stem}_positive.vsfq")
        pairs.append(_pair_from_labels(anchor, positive, payload))
    if not pairs:
        raise DataError(f"{train_dir}: no training pairs found")
    return pairs


def list_heldout_pairs(root) -> list[tuple[str, Path, Path]]:
    """(stem, query path, ref path) for every held-out pair, sorted."""
    heldout_dir = Path(root) / "heldout"
    if not heldout_dir.is_dir():
        raise DataError(f"{heldout_dir}: held-out split not found")
    entries = []
    for query_path in sorted(heldout_dir.glob("*_query.vsfq")):
        stem = query_path.name[:-len("_query.vsfq")]
        ref_path = heldout_dir / f"{stem}_ref.vsfq"
        if not ref_path.exists():
            raise DataError(f"{ref_path}: missing reference half of pair {stem}")
        entries.append((stem, query_path, ref_path))
    return entries
