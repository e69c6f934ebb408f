"""Tracking evaluation: CLEAR matching, MOTA, IDF1, and pan-gap analysis.

Inputs are detections grouped by frame as ``{frame: [(id, box), ...]}``
(see :func:`rinktrack.core.group_boxes_by_frame`) so ground truth and
predictions stay in the interchange representation end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import BoundingBox, Track, ValidationError
from .tracker import hungarian, iou_matrix

FrameBoxes = Mapping[int, Sequence[tuple[int, BoundingBox]]]


@dataclass
class FrameMatching:
    """Per-frame one-to-one GT/prediction correspondence.

    ``matches[f]`` holds (gt_id, pred_id) pairs; ``unmatched_gt[f]`` are
    the frame's false negatives and ``unmatched_pred[f]`` its false
    positives.
    """

    matches: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    unmatched_gt: dict[int, list[int]] = field(default_factory=dict)
    unmatched_pred: dict[int, list[int]] = field(default_factory=dict)

    @property
    def num_fn(self) -> int:
        return sum(len(v) for v in self.unmatched_gt.values())

    @property
    def num_fp(self) -> int:
        return sum(len(v) for v in self.unmatched_pred.values())

    @property
    def gt_total(self) -> int:
        return self.num_fn + sum(len(v) for v in self.matches.values())


def match_frames(gt: FrameBoxes, pred: FrameBoxes, iou_threshold: float = 0.5) -> FrameMatching:
    """CLEAR-style matching with persistence.

    A pair matched on the previous frame stays matched while both ids
    are present and still overlap at or above the threshold; everything
    else is resolved per frame by min-cost assignment on 1 - IoU.
    """
    result = FrameMatching()
    prev: dict[int, int] = {}  # gt_id -> pred_id carried across frames
    frames = sorted(set(gt) | set(pred))
    for f in frames:
        gt_items = list(gt.get(f, ()))
        pred_items = list(pred.get(f, ()))
        gt_ids = [g for g, _ in gt_items]
        pred_ids = [p for p, _ in pred_items]
        overlap = iou_matrix([b for _, b in gt_items], [b for _, b in pred_items])

        pred_index = {p: j for j, p in enumerate(pred_ids)}
        matched: list[tuple[int, int]] = []
        used_gt: set[int] = set()
        used_pred: set[int] = set()
        for i, g in enumerate(gt_ids):
            p = prev.get(g)
            if p is None or p not in pred_index or p in used_pred:
                continue
            j = pred_index[p]
            if overlap[i, j] >= iou_threshold:
                matched.append((g, p))
                used_gt.add(g)
                used_pred.add(p)

        rem_gt = [i for i, g in enumerate(gt_ids) if g not in used_gt]
        rem_pred = [j for j, p in enumerate(pred_ids) if p not in used_pred]
        if rem_gt and rem_pred:
            cost = 1.0 - overlap[np.ix_(rem_gt, rem_pred)]
            for ri, rj in hungarian(cost):
                i, j = rem_gt[ri], rem_pred[rj]
                if overlap[i, j] >= iou_threshold:
                    matched.append((gt_ids[i], pred_ids[j]))
                    used_gt.add(gt_ids[i])
                    used_pred.add(pred_ids[j])

        matched.sort()
        result.matches[f] = matched
        result.unmatched_gt[f] = [g for g in gt_ids if g not in used_gt]
        result.unmatched_pred[f] = [p for p in pred_ids if p not in used_pred]
        for g, p in matched:
            prev[g] = p
    return result


def count_idsw(matching: FrameMatching) -> int:
    """Identity switches under the last-known-assignment rule.

    A ground-truth id switching to a predicted id different from the
    last one it was ever matched to counts once, gaps notwithstanding;
    the first match of an id never counts.
    """
    last_known: dict[int, int] = {}
    switches = 0
    for f in sorted(matching.matches):
        for g, p in matching.matches[f]:
            if g in last_known and last_known[g] != p:
                switches += 1
            last_known[g] = p
    return switches


def mota(fp: int, fn: int, idsw: int, gt_total: int) -> float:
    """1 - (FN + FP + IDSW) / GT; may be negative."""
    if gt_total <= 0:
        raise ValidationError("MOTA requires a positive ground-truth count")
    return 1.0 - (fn + fp + idsw) / gt_total


def idf1_components(gt: FrameBoxes, pred: FrameBoxes, iou_threshold: float = 0.5
                    ) -> tuple[int, int, int]:
    """(IDTP, total gt detections, total pred detections) for IDF1.

    For each (gt identity, pred identity) pair, count frames where both
    appear and overlap at or above the threshold; IDTP maximizes the
    total matched frames over one-to-one identity mappings.
    """
    gt_count: dict[int, int] = {}
    pred_count: dict[int, int] = {}
    overlap_count: dict[tuple[int, int], int] = {}
    frames = sorted(set(gt) | set(pred))
    for f in frames:
        gt_items = list(gt.get(f, ()))
        pred_items = list(pred.get(f, ()))
        for g, _ in gt_items:
            gt_count[g] = gt_count.get(g, 0) + 1
        for p, _ in pred_items:
            pred_count[p] = pred_count.get(p, 0) + 1
        if gt_items and pred_items:
            overlap = iou_matrix([b for _, b in gt_items], [b for _, b in pred_items])
            for i, (g, _) in enumerate(gt_items):
                for j, (p, _) in enumerate(pred_items):
                    if overlap[i, j] >= iou_threshold:
                        overlap_count[(g, p)] = overlap_count.get((g, p), 0) + 1

    total_gt = sum(gt_count.values())
    total_pred = sum(pred_count.values())
    if total_gt == 0:
        raise ValidationError("IDF1 requires non-empty ground truth")
    if not overlap_count:
        return 0, total_gt, total_pred

    gt_index = {g: i for i, g in enumerate(sorted(gt_count))}
    pred_index = {p: j for j, p in enumerate(sorted(pred_count))}
    gains = np.zeros((len(gt_index), len(pred_index)))
    for (g, p), c in overlap_count.items():
        gains[gt_index[g], pred_index[p]] = c
    idtp = int(sum(gains[i, j] for i, j in hungarian(-gains)))
    return idtp, total_gt, total_pred


def idf1(gt: FrameBoxes, pred: FrameBoxes, iou_threshold: float = 0.5) -> float:
    """IDF1 = 2 IDTP / (2 IDTP + IDFP + IDFN) under the best identity mapping."""
    idtp, total_gt, total_pred = idf1_components(gt, pred, iou_threshold)
    return 2.0 * idtp / (total_gt + total_pred)


def pan_idsw(gt_tracks: Iterable[Track], delta: int) -> int:
    """Count ground-truth gaps between consecutive detections exceeding delta frames."""
    count = 0
    for trk in gt_tracks:
        frames = trk.frames
        count += sum(1 for a, b in zip(frames, frames[1:]) if b - a > delta)
    return count


def pan_sweep(gt_tracks: Sequence[Track], deltas: Iterable[int]) -> list[tuple[int, int]]:
    return [(int(d), pan_idsw(gt_tracks, int(d))) for d in deltas]


def pan_proportion(gt_tracks: Sequence[Track], idsw: int, delta: int) -> float | None:
    """Share of identity switches attributable to out-of-view gaps.

    Undefined (None) when there are no identity switches at all.
    """
    if idsw <= 0:
        return None
    return pan_idsw(gt_tracks, delta) / idsw


@dataclass(frozen=True)
class EvalRow:
    name: str
    mota: float
    idf1: float
    idsw: int
    fp: int
    fn: int
    gt_total: int

    def __post_init__(self) -> None:
        if self.mota > 1.0 + 1e-12:
            raise ValidationError(f"MOTA cannot exceed 1, got {self.mota}")
        if min(self.idsw, self.fp, self.fn, self.gt_total) < 0:
            raise ValidationError("metric counts must be non-negative")


@dataclass(frozen=True)
class EvalReport:
    """Per-video metric rows plus the pooled aggregate."""

    per_video: tuple[EvalRow, ...]
    mota: float
    idf1: float
    idsw: int
    fp: int
    fn: int
    gt_total: int


def evaluate_video(name: str, gt: FrameBoxes, pred: FrameBoxes, iou_threshold: float = 0.5
                   ) -> tuple[EvalRow, tuple[int, int, int]]:
    """Evaluate one video; returns the row and IDF1 components for pooling."""
    matching = match_frames(gt, pred, iou_threshold)
    fp = matching.num_fp
    fn = matching.num_fn
    idsw = count_idsw(matching)
    gt_total = matching.gt_total
    components = idf1_components(gt, pred, iou_threshold)
    idtp, total_gt, total_pred = components
    row = EvalRow(name=name, mota=mota(fp, fn, idsw, gt_total),
                  idf1=2.0 * idtp / (total_gt + total_pred),
                  idsw=idsw, fp=fp, fn=fn, gt_total=gt_total)
    return row, components


def evaluate(videos: Sequence[tuple[str, FrameBoxes, FrameBoxes]], iou_threshold: float = 0.5
             ) -> EvalReport:
    rows = []
    idtp_sum = 0
    det_sum = 0
    for name, gt, pred in videos:
        row, (idtp, total_gt, total_pred) = evaluate_video(name, gt, pred, iou_threshold)
        rows.append(row)
        idtp_sum += idtp
        det_sum += total_gt + total_pred
    fp = sum(r.fp for r in rows)
    fn = sum(r.fn for r in rows)
    idsw = sum(r.idsw for r in rows)
    gt_total = sum(r.gt_total for r in rows)
    return EvalReport(
        per_video=tuple(rows),
        mota=mota(fp, fn, idsw, gt_total),
        idf1=(2.0 * idtp_sum / det_sum) if det_sum else 0.0,
        idsw=idsw,
        fp=fp,
        fn=fn,
        gt_total=gt_total,
    )


def format_report_table(report: EvalReport) -> str:
    """Aligned text table, one row per video plus the pooled aggregate."""
    header = f"{'video':<14}{'IDF1':>8}{'MOTA':>8}{'IDSW':>7}{'FP':>7}{'FN':>7}"
    lines = [header, "-" * len(header)]
    for row in report.per_video:
        lines.append(
            f"{row.name:<14}{100 * row.idf1:>8.2f}{100 * row.mota:>8.2f}"
            f"{row.idsw:>7d}{row.fp:>7d}{row.fn:>7d}"
        )
    lines.append(
        f"{'ALL':<14}{100 * report.idf1:>8.2f}{100 * report.mota:>8.2f}"
        f"{report.idsw:>7d}{report.fp:>7d}{report.fn:>7d}"
    )
    return "\n".join(lines) + "\n"
