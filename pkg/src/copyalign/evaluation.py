"""Segment-level precision/recall evaluation.

A detection counts as correct when an unclaimed ground-truth pair of the
same video pair overlaps it sufficiently on BOTH time axes: any overlap
at all in share-frames mode (threshold 0), or interval IoU at or above
the threshold otherwise. Matching is one-to-one and greedy, processing
detections by descending score and pairing each with the free ground
truth of highest min-axis IoU; because a detection's best candidate
always survives a tighter threshold whenever any candidate does,
stricter protocols can only lower the operating curve.

The score sweep visits every distinct detection score and reports
precision, recall and F1 at each, plus the best F1.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError


@dataclass
class GroundTruthPair:
    query_id: str
    ref_id: str
    q_segment: tuple
    r_segment: tuple

    def __post_init__(self):
        for name, seg in (("query", self.q_segment), ("reference", self.r_segment)):
            if seg[0] >= seg[1]:
                raise DataError(f"{name} segment {seg} must have start < end")


@dataclass
class DetectionRecord:
    query_id: str
    ref_id: str
    q_segment: tuple
    r_segment: tuple
    score: float


@dataclass
class EvalReport:
    iou_threshold: float
    operating_points: list  # (score_threshold, precision, recall, f1)
    best_f1: float
    total_ground_truth: int
    total_detections: int

    def to_dict(self) -> dict:
        return {
            "iou_threshold": self.iou_threshold,
            "best_f1": self.best_f1,
            "total_ground_truth": self.total_ground_truth,
            "total_detections": self.total_detections,
            "operating_points": [
                {"score_threshold": t, "precision": p, "recall": r, "f1": f}
                for t, p, r, f in self.operating_points
            ],
        }


def segment_iou(a: tuple, b: tuple) -> float:
    """Interval intersection over union; 0 when disjoint or degenerate."""
    a0, a1 = float(a[0]), float(a[1])
    b0, b1 = float(b[0]), float(b[1])
    if a0 > a1 or b0 > b1:
        raise DataError(f"inverted segment in IoU: {a} vs {b}")
    inter = min(a1, b1) - max(a0, b0)
    if inter < 0:
        return 0.0
    union = max(a1, b1) - min(a0, b0)
    if union <= 0:
        return 0.0
    return inter / union


def _axis_ious(det: DetectionRecord, gt: GroundTruthPair) -> tuple[float, float]:
    return (segment_iou(det.q_segment, gt.q_segment),
            segment_iou(det.r_segment, gt.r_segment))


def _qualifies(iou_q: float, iou_r: float, iou_threshold: float) -> bool:
    if iou_threshold == 0:
        return iou_q > 0 and iou_r > 0
    return iou_q >= iou_threshold and iou_r >= iou_threshold


def match_detection(det: DetectionRecord, gts: list[GroundTruthPair],
                    iou_threshold: float,
                    claimed: set | None = None) -> int | None:
    """Index of the best unclaimed qualifying ground truth, or None.

    Candidates must share the (query_id, ref_id) pair; the one with the
    highest min-axis IoU wins (lowest index on ties).
    """
    claimed = claimed if claimed is not None else set()
    best_idx = None
    best_value = -1.0
    for idx, gt in enumerate(gts):
        if idx in claimed:
            continue
        if gt.query_id != det.query_id or gt.ref_id != det.ref_id:
            continue
        iou_q, iou_r = _axis_ious(det, gt)
        if not _qualifies(iou_q, iou_r, iou_threshold):
            continue
        value = min(iou_q, iou_r)
        if value > best_value:
            best_value = value
            best_idx = idx
    return best_idx


def _greedy_flags(dets: list[DetectionRecord], gts: list[GroundTruthPair],
                  iou_threshold: float) -> list[bool]:
    """One-to-one correctness flags, detections taken in score order."""
    def sort_key(pair):
        idx, det = pair
        best = 0.0
        for gt in gts:
            if gt.query_id != det.query_id or gt.ref_id != det.ref_id:
                continue
            best = max(best, min(*_axis_ious(det, gt)))
        return (-det.score, -best, idx)

    order = [idx for idx, _ in sorted(enumerate(dets), key=sort_key)]
    claimed: set[int] = set()
    flags = [False] * len(dets)
    for idx in order:
        match = match_detection(dets[idx], gts, iou_threshold, claimed)
        if match is not None:
            claimed.add(match)
            flags[idx] = True
    return flags


def precision_recall_sweep(dets: list[DetectionRecord],
                           gts: list[GroundTruthPair],
                           iou_threshold: float = 0.0) -> EvalReport:
    """Precision/recall/F1 at every distinct score threshold, plus best F1."""
    if not gts:
        raise DataError("empty ground-truth set: recall is undefined")
    total_gt = len(gts)
    if not dets:
        return EvalReport(iou_threshold, [(0.0, 0.0, 0.0, 0.0)], 0.0, total_gt, 0)
    flags = _greedy_flags(dets, gts, iou_threshold)
    scored = sorted(zip(dets, flags), key=lambda pair: -pair[0].score)
    thresholds = sorted({d.score for d in dets}, reverse=True)
    points = []
    best_f1 = 0.0
    retained = 0
    correct = 0
    cursor = 0
    for thr in thresholds:
        while cursor < len(scored) and scored[cursor][0].score >= thr:
            retained += 1
            if scored[cursor][1]:
                correct += 1
            cursor += 1
        precision = correct / retained if retained else 0.0
        recall = correct / total_gt
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        points.append((float(thr), precision, recall, f1))
        best_f1 = max(best_f1, f1)
    return EvalReport(iou_threshold, points, best_f1, total_gt, len(dets))


# ---------------------------------------------------------------------------
# JSON / CSV interchange


def load_annotations(path) -> list[GroundTruthPair]:
    path = Path(path)
    try:
        records = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid annotations JSON: {exc}") from exc
    gts = []
    for rec in records:
        try:
            gts.append(GroundTruthPair(
                query_id=str(rec["query_id"]), ref_id=str(rec["ref_id"]),
                q_segment=(float(rec["q_start"]), float(rec["q_end"])),
                r_segment=(float(rec["r_start"]), float(rec["r_end"])),
            ))
        except KeyError as exc:
            raise DataError(f"{path}: annotation record missing {exc}") from exc
    return gts


def load_detections(path) -> list[DetectionRecord]:
    path = Path(path)
    try:
        records = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid detections JSON: {exc}") from exc
    dets = []
    for rec in records:
        try:
            dets.append(DetectionRecord(
                query_id=str(rec["query_id"]), ref_id=str(rec["ref_id"]),
                q_segment=(float(rec["q_start"]), float(rec["q_end"])),
                r_segment=(float(rec["r_start"]), float(rec["r_end"])),
                score=float(rec["score"]),
            ))
        except KeyError as exc:
            raise DataError(f"{path}: detection record missing {exc}") from exc
    return dets


def write_report(path, report: EvalReport) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def write_sweep_csv(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["score_threshold", "precision", "recall", "f1"])
        for thr, precision, recall, f1 in report.operating_points:
            writer.writerow([f"{thr:.6f}", f"{precision:.6f}", f"{recall:.6f}", f"{f1:.6f}"])
