"""IoU-gated tracking-by-detection with a constant-velocity Kalman filter.

Association solves a min-cost assignment on 1 - IoU per frame; track
lifecycle follows the usual tentative/confirmed/lost rules driven by
``min_hits`` and ``max_age``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import BoundingBox, Detection, Track, ValidationError


@dataclass(frozen=True)
class TrackerParams:
    """Association and lifecycle tunables.

    Noise vectors are the diagonals of the process/measurement
    covariances over the state [cx, cy, area, aspect, vcx, vcy, varea]
    and the measurement [cx, cy, area, aspect].
    """

    iou_threshold: float = 0.3
    max_age: int = 30
    min_hits: int = 3
    confidence_threshold: float = 0.5
    initial_covariance: tuple[float, ...] = (10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4)
    process_noise: tuple[float, ...] = (1.0, 1.0, 1.0, 0.01, 0.01, 0.01, 1e-4)
    measurement_noise: tuple[float, ...] = (1.0, 1.0, 10.0, 10.0)

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrackerParams":
        kwargs = {}
        for name in cls.__dataclass_fields__:
            if name in data:
                value = data[name]
                kwargs[name] = tuple(value) if isinstance(value, (list, tuple)) else value
        return cls(**kwargs)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint, 1 when identical."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes_a: Sequence[BoundingBox], boxes_b: Sequence[BoundingBox]) -> np.ndarray:
    """Pairwise IoU, shape (len(a), len(b))."""
    if len(boxes_a) == 0 or len(boxes_b) == 0:
        return np.zeros((len(boxes_a), len(boxes_b)))
    a = np.array([[b.x, b.y, b.x2, b.y2] for b in boxes_a])
    b = np.array([[c.x, c.y, c.x2, c.y2] for c in boxes_b])
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def hungarian(cost: np.ndarray | Sequence[Sequence[float]]) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment of rows to columns.

    Rectangular matrices are allowed; the result covers min(m, n)
    pairs. Rows are introduced in ascending order and column scans
    break ties toward the lowest index, so the output is deterministic.
    Returns (row, col) pairs sorted by row.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return []
    if cost.ndim != 2:
        raise ValidationError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValidationError("cost matrix entries must be finite")

    transposed = cost.shape[0] > cost.shape[1]
    if transposed:
        cost = cost.T
    m, n = cost.shape

    # Shortest-augmenting-path algorithm with row/column potentials.
    # Column index n is a virtual slot that temporarily holds the row
    # being inserted.
    INF = float("inf")
    u = np.zeros(m)
    v = np.zeros(n + 1)
    assigned_row = np.full(n + 1, -1, dtype=int)
    for i in range(m):
        assigned_row[n] = i
        j0 = n
        minv = np.full(n, INF)
        way = np.full(n, -1, dtype=int)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = assigned_row[j0]
            free = ~used[:n]
            reduced = cost[i0, :] - u[i0] - v[:n]
            improved = free & (reduced < minv)
            minv[improved] = reduced[improved]
            way[improved] = j0
            free_idx = np.flatnonzero(free)
            j1 = int(free_idx[np.argmin(minv[free_idx])])
            delta = minv[j1]
            used_cols = np.flatnonzero(used)
            u[assigned_row[used_cols]] += delta
            v[used_cols] -= delta
            minv[~used[:n]] -= delta
            j0 = j1
            if assigned_row[j0] == -1:
                break
        while j0 != n:
            j1 = int(way[j0])
            assigned_row[j0] = assigned_row[j1]
            j0 = j1

    pairs = [(int(assigned_row[j]), j) for j in range(n) if assigned_row[j] != -1]
    if transposed:
        pairs = [(j, i) for i, j in pairs]
    return sorted(pairs)


# ---------------------------------------------------------------------------
# Constant-velocity Kalman filter over [cx, cy, area, aspect, vcx, vcy, varea]
# ---------------------------------------------------------------------------

_F = np.eye(7)
_F[0, 4] = _F[1, 5] = _F[2, 6] = 1.0
_H = np.zeros((4, 7))
_H[0, 0] = _H[1, 1] = _H[2, 2] = _H[3, 3] = 1.0


@dataclass
class KalmanTrackState:
    mean: np.ndarray
    covariance: np.ndarray


def box_to_measurement(box: BoundingBox) -> np.ndarray:
    cx, cy = box.center
    return np.array([cx, cy, box.area, box.w / box.h])


def state_to_box(state: KalmanTrackState) -> BoundingBox:
    cx, cy, s, r = state.mean[:4]
    s = max(float(s), 1.0)
    r = max(float(r), 1e-6)
    w = (s * r) ** 0.5
    h = s / w
    return BoundingBox(x=cx - w / 2.0, y=cy - h / 2.0, w=w, h=h)


def _symmetrize(p: np.ndarray) -> np.ndarray:
    return (p + p.T) / 2.0


def kf_initiate(box: BoundingBox, params: TrackerParams) -> KalmanTrackState:
    mean = np.zeros(7)
    mean[:4] = box_to_measurement(box)
    return KalmanTrackState(mean=mean, covariance=np.diag(params.initial_covariance).astype(float))


def kf_predict(state: KalmanTrackState, params: TrackerParams) -> KalmanTrackState:
    """Advance one frame under constant velocity and grow the covariance."""
    mean = _F @ state.mean
    mean[2] = max(mean[2], 1.0)  # area kept positive so the box stays valid
    cov = _symmetrize(_F @ state.covariance @ _F.T + np.diag(params.process_noise))
    return KalmanTrackState(mean=mean, covariance=cov)


def kf_update(state: KalmanTrackState, box: BoundingBox, params: TrackerParams) -> KalmanTrackState:
    z = box_to_measurement(box)
    r = np.diag(params.measurement_noise).astype(float)
    s = _H @ state.covariance @ _H.T + r
    gain = np.linalg.solve(s.T, (_H @ state.covariance.T)).T
    innovation = z - _H @ state.mean
    mean = state.mean + gain @ innovation
    mean[2] = max(mean[2], 1.0)
    cov = _symmetrize((np.eye(7) - gain @ _H) @ state.covariance)
    return KalmanTrackState(mean=mean, covariance=cov)


# ---------------------------------------------------------------------------
# Track lifecycle
# ---------------------------------------------------------------------------


@dataclass
class _LiveTrack:
    track_id: int
    state: KalmanTrackState
    hits: int = 1
    hit_streak: int = 1
    time_since_update: int = 0
    recorded: list[tuple[int, Detection]] = field(default_factory=list)


class SortTracker:
    """Stateful per-video tracker; feed frames in increasing order."""

    def __init__(self, params: TrackerParams | None = None):
        self.params = params or TrackerParams()
        self._live: list[_LiveTrack] = []
        self._finished: list[_LiveTrack] = []
        self._next_id = 1
        self._frames_seen = 0

    def step(self, frame: int, detections: Sequence[Detection]) -> None:
        params = self.params
        self._frames_seen += 1
        detections = [d for d in detections if d.confidence >= params.confidence_threshold]

        for trk in self._live:
            trk.state = kf_predict(trk.state, params)

        matches: list[tuple[int, int]] = []
        unmatched_dets = set(range(len(detections)))
        if self._live and detections:
            predicted = [state_to_box(trk.state) for trk in self._live]
            overlap = iou_matrix(predicted, [d.box for d in detections])
            for ti, di in hungarian(1.0 - overlap):
                if overlap[ti, di] >= params.iou_threshold:
                    matches.append((ti, di))
                    unmatched_dets.discard(di)
        matched_tracks = {ti for ti, _ in matches}

        for ti, di in matches:
            trk = self._live[ti]
            det = detections[di]
            trk.state = kf_update(trk.state, det.box, params)
            trk.hits += 1
            trk.hit_streak += 1
            trk.time_since_update = 0
            if trk.hit_streak >= params.min_hits or self._frames_seen <= params.min_hits:
                # Matched boxes are reported as observed; the filter only
                # steers association.
                trk.recorded.append((frame, det))

        survivors: list[_LiveTrack] = []
        for ti, trk in enumerate(self._live):
            if ti not in matched_tracks:
                trk.time_since_update += 1
                trk.hit_streak = 0
            if trk.time_since_update > params.max_age:
                self._finished.append(trk)
            else:
                survivors.append(trk)
        self._live = survivors

        for di in sorted(unmatched_dets):
            det = detections[di]
            trk = _LiveTrack(track_id=self._next_id, state=kf_initiate(det.box, params))
            self._next_id += 1
            if self._frames_seen <= params.min_hits:
                trk.recorded.append((frame, det))
            self._live.append(trk)

    def finish(self) -> list[Track]:
        tracks = []
        for trk in self._finished + self._live:
            if trk.recorded:
                tracks.append(
                    Track(track_id=trk.track_id, detections=tuple(det for _, det in trk.recorded))
                )
        return sorted(tracks, key=lambda t: t.track_id)


def track(frames: Mapping[int, Sequence[Detection]], params: TrackerParams | None = None) -> list[Track]:
    """Run the tracker over per-frame detection lists.

    Frame indices absent from the mapping are treated as empty frames,
    so gaps age tracks the same way a real video would.
    """
    tracker = SortTracker(params)
    if frames:
        lo, hi = min(frames), max(frames)
        for f in range(lo, hi + 1):
            tracker.step(f, frames.get(f, ()))
    return tracker.finish()
