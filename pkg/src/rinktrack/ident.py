"""Tracklet-level team assignment and jersey-number inference.

A tracklet is identified in four steps: a per-frame team vote, window
probabilities from a sliding-window scorer, a visibility gate driven by
an image-level scorer's null-class output, and aggregation of the
window probabilities into one distribution ``p_jn``. Roster masks are
applied last, multiplying ``p_jn`` elementwise before the argmax.

Scorers are pluggable: anything exposing ``score_frame`` /
``score_window`` works, including the file-backed readers below and the
synthetic oracles in :mod:`rinktrack.sim`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .core import (
    ClassVocabulary,
    ProbVector,
    RosterVector,
    TeamLabel,
    Track,
    ValidationError,
)

#: Sentinel identity for referee tracklets, outside the jersey vocabulary.
REFEREE_CLASS = -1

AGGREGATION_METHODS = ("avg", "majority")


class ScorerCoverageError(LookupError):
    """A file-backed scorer has no entry for a requested track/frame."""


class FrameScorer(Protocol):
    def score_frame(self, track: Track, index: int) -> np.ndarray:
        """Distribution for one tracklet frame (jersey classes or teams)."""


class WindowScorer(Protocol):
    def score_window(self, track: Track, start: int, length: int) -> np.ndarray:
        """Jersey-class distribution for ``track.detections[start:start+length]``."""


@dataclass(frozen=True)
class IdentParams:
    """Inference tunables.

    ``theta`` is the null-probability threshold of the visibility gate,
    ``window``/``stride`` shape the sliding window. The remaining flags
    select the aggregation variant: ``postprocessing`` drops windows
    whose argmax is null before averaging/voting, and
    ``visibility_filtering`` enables the gate at all (disabling it
    treats every tracklet as number-visible). When every window argmaxes
    null on a gated-visible tracklet, the fallback averages all windows
    and argmaxes over non-null classes unless ``strict_null_fallback``
    is set, in which case the tracklet is labelled null.
    """

    theta: float = 0.01
    window: int = 30
    stride: int = 1
    method: str = "avg"
    visibility_filtering: bool = True
    postprocessing: bool = True
    strict_null_fallback: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.theta < 1.0:
            raise ValidationError(f"theta must be in (0, 1), got {self.theta}")
        if self.window < 1 or self.stride < 1:
            raise ValidationError("window and stride must be >= 1")
        if self.method not in AGGREGATION_METHODS:
            raise ValidationError(f"method must be one of {AGGREGATION_METHODS}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "IdentParams":
        kwargs = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**kwargs)


def team_vote(tracklet: Track, scorer: FrameScorer) -> TeamLabel:
    """Majority vote over per-frame team argmaxes.

    Count ties go to the label with the larger summed confidence over
    its winning frames, then to Home < Away < Referee order.
    """
    counts = {label: 0 for label in TeamLabel}
    confidence = {label: 0.0 for label in TeamLabel}
    for i in range(len(tracklet)):
        probs = np.asarray(scorer.score_frame(tracklet, i), dtype=float)
        if probs.shape != (3,):
            raise ValidationError(f"team scorer must return 3 probabilities, got {probs.shape}")
        label = TeamLabel(int(np.argmax(probs)))
        counts[label] += 1
        confidence[label] += float(probs.max())
    best = max(counts.values())
    tied = [label for label in TeamLabel if counts[label] == best]
    if len(tied) == 1:
        return tied[0]
    top_conf = max(confidence[label] for label in tied)
    for label in TeamLabel:  # enum order settles confidence ties
        if label in tied and confidence[label] == top_conf:
            return label
    raise AssertionError("unreachable")


def window_starts(k: int, window: int, stride: int = 1) -> list[int]:
    """Window start indices; a tracklet shorter than the window yields one."""
    if k < window:
        return [0]
    return list(range(0, k - window + 1, stride))


def window_probs(tracklet: Track, scorer: WindowScorer, params: IdentParams) -> list[ProbVector]:
    """Slide the scorer over the tracklet; short tracklets get one full window."""
    k = len(tracklet)
    out = []
    for start in window_starts(k, params.window, params.stride):
        length = min(params.window, k)
        out.append(ProbVector(values=np.asarray(scorer.score_window(tracklet, start, length), dtype=float)))
    return out


def jersey_visible(tracklet: Track, image_scorer: FrameScorer, theta: float) -> bool:
    """True iff any frame's null-class probability falls strictly below theta."""
    for i in range(len(tracklet)):
        probs = np.asarray(image_scorer.score_frame(tracklet, i), dtype=float)
        if probs[-1] < theta:
            return True
    return False


def _stack(prob_vectors: Sequence[ProbVector]) -> np.ndarray:
    if len(prob_vectors) == 0:
        raise ValidationError("cannot aggregate an empty window list")
    return np.stack([p.values for p in prob_vectors])


def _aggregate_mean(stacked: np.ndarray, postprocessing: bool, strict_null_fallback: bool
                    ) -> tuple[int, np.ndarray]:
    null_index = stacked.shape[1] - 1
    if postprocessing:
        kept = stacked[np.argmax(stacked, axis=1) != null_index]
        if len(kept) == 0:
            mean = stacked.mean(axis=0)
            if strict_null_fallback:
                return null_index, mean
            return int(np.argmax(mean[:null_index])), mean
        mean = kept.mean(axis=0)
    else:
        mean = stacked.mean(axis=0)
    return int(np.argmax(mean)), mean


def _aggregate_majority(stacked: np.ndarray, postprocessing: bool, strict_null_fallback: bool) -> int:
    null_index = stacked.shape[1] - 1
    argmaxes = np.argmax(stacked, axis=1)
    if postprocessing:
        argmaxes = argmaxes[argmaxes != null_index]
        if len(argmaxes) == 0:
            mean = stacked.mean(axis=0)
            if strict_null_fallback:
                return null_index
            return int(np.argmax(mean[:null_index]))
    counts = np.bincount(argmaxes, minlength=null_index + 1)
    return int(np.argmax(counts))  # ties fall to the lower class index


def aggregate(P: Sequence[ProbVector], visible: bool, vocab: ClassVocabulary, *,
              postprocessing: bool = True, strict_null_fallback: bool = False
              ) -> tuple[int, ProbVector]:
    """Collapse window probabilities into one identity and distribution.

    Invisible tracklets are labelled null with a one-hot null ``p_jn``
    (keeping them null under any roster mask). Visible tracklets average
    the windows whose argmax is not null; see :class:`IdentParams` for
    the empty-selection fallback.
    """
    stacked = _stack(P)
    if stacked.shape[1] != vocab.num_classes:
        raise ValidationError(
            f"window probabilities have {stacked.shape[1]} classes, vocabulary has {vocab.num_classes}"
        )
    if not visible:
        one_hot = np.zeros(vocab.num_classes)
        one_hot[vocab.null_index] = 1.0
        return vocab.null_index, ProbVector(values=one_hot)
    identity, mean = _aggregate_mean(stacked, postprocessing, strict_null_fallback)
    return identity, ProbVector(values=mean / mean.sum())


def aggregate_majority(P: Sequence[ProbVector], visible: bool, *,
                       postprocessing: bool = True, strict_null_fallback: bool = False) -> int:
    """Mode of the non-null window argmaxes; null when not visible."""
    stacked = _stack(P)
    if not visible:
        return stacked.shape[1] - 1
    return _aggregate_majority(stacked, postprocessing, strict_null_fallback)


def identify(tracklet: Track, team: TeamLabel, p_jn: ProbVector,
             v_h: RosterVector, v_a: RosterVector) -> int:
    """Roster-masked identity: argmax of p_jn restricted to the team roster.

    Referee tracklets map to the referee sentinel regardless of p_jn.
    """
    if team is TeamLabel.REFEREE:
        return REFEREE_CLASS
    mask = v_h.mask if team is TeamLabel.HOME else v_a.mask
    if len(mask) != len(p_jn):
        raise ValidationError(
            f"mask length {len(mask)} does not match probability length {len(p_jn)} "
            f"(track {tracklet.track_id})"
        )
    return int(np.argmax(p_jn.values * mask))


@dataclass(frozen=True)
class Scorers:
    team: FrameScorer
    frame: FrameScorer
    window: WindowScorer


@dataclass(frozen=True)
class Rosters:
    home: RosterVector
    away: RosterVector


@dataclass(frozen=True)
class TrackIdentity:
    track_id: int
    team: TeamLabel
    identity: int
    p_jn: ProbVector


def run_pipeline(tracks: Iterable[Track], scorers: Scorers, rosters: Rosters | None,
                 vocab: ClassVocabulary, params: IdentParams,
                 mask_rosters: bool = True) -> list[TrackIdentity]:
    """Team vote, window inference, visibility gate, aggregation, masking.

    With ``mask_rosters`` false (or no rosters supplied) the unmasked
    aggregation argmax is reported instead of the roster-masked one.
    The aggregation method only selects how the unmasked identity is
    produced; roster masking always applies to the averaged ``p_jn``.
    """
    if mask_rosters and rosters is None:
        raise ValidationError("roster masking requested but no rosters supplied")
    results = []
    for trk in tracks:
        team = team_vote(trk, scorers.team)
        P = window_probs(trk, scorers.window, params)
        visible = True
        if params.visibility_filtering:
            visible = jersey_visible(trk, scorers.frame, params.theta)
        if params.method == "majority":
            identity = aggregate_majority(
                P, visible,
                postprocessing=params.postprocessing,
                strict_null_fallback=params.strict_null_fallback,
            )
            _, p_jn = aggregate(
                P, visible,
                vocab,
                postprocessing=params.postprocessing,
                strict_null_fallback=params.strict_null_fallback,
            )
        else:
            identity, p_jn = aggregate(
                P, visible,
                vocab,
                postprocessing=params.postprocessing,
                strict_null_fallback=params.strict_null_fallback,
            )
        if team is TeamLabel.REFEREE:
            identity = REFEREE_CLASS
        elif mask_rosters and rosters is not None:
            identity = identify(trk, team, p_jn, rosters.home, rosters.away)
        results.append(TrackIdentity(track_id=trk.track_id, team=team, identity=identity, p_jn=p_jn))
    return results


# ---------------------------------------------------------------------------
# File-backed scorers (JSON lines)
# ---------------------------------------------------------------------------


def _load_jsonl(path: str | Path) -> list[dict]:
    records = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            records.append(json.loads(line))
    return records


class FileFrameScorer:
    """Jersey-class frame scores from ``{"track_id", "frame", "probs"}`` lines."""

    def __init__(self, path: str | Path):
        self._scores = {
            (int(rec["track_id"]), int(rec["frame"])): np.asarray(rec["probs"], dtype=float)
            for rec in _load_jsonl(path)
        }

    def score_frame(self, track: Track, index: int) -> np.ndarray:
        key = (track.track_id, track.detections[index].frame)
        try:
            return self._scores[key]
        except KeyError:
            raise ScorerCoverageError(
                f"no frame score for track {track.track_id} at frame {key[1]}"
            ) from None


class FileTeamScorer:
    """Team distributions from ``{"track_id", "frame", "team_probs"}`` lines."""

    def __init__(self, path: str | Path):
        self._scores = {
            (int(rec["track_id"]), int(rec["frame"])): np.asarray(rec["team_probs"], dtype=float)
            for rec in _load_jsonl(path)
        }

    def score_frame(self, track: Track, index: int) -> np.ndarray:
        key = (track.track_id, track.detections[index].frame)
        try:
            return self._scores[key]
        except KeyError:
            raise ScorerCoverageError(
                f"no team score for track {track.track_id} at frame {key[1]}"
            ) from None


class FileWindowScorer:
    """Window scores from ``{"track_id", "window_start", "probs"}`` lines.

    ``window_start`` is the frame number of the window's first detection.
    """

    def __init__(self, path: str | Path):
        self._scores = {
            (int(rec["track_id"]), int(rec["window_start"])): np.asarray(rec["probs"], dtype=float)
            for rec in _load_jsonl(path)
        }

    def score_window(self, track: Track, start: int, length: int) -> np.ndarray:
        key = (track.track_id, track.detections[start].frame)
        try:
            return self._scores[key]
        except KeyError:
            raise ScorerCoverageError(
                f"no window score for track {track.track_id} starting at frame {key[1]}"
            ) from None


_DEFAULT_COLOR_TO_TEAM = {"white": "away", "ref": "referee"}


def collapse_team_colors(color_probs: Mapping[str, float],
                         color_to_team: Mapping[str, str] | None = None) -> np.ndarray:
    """Fold jersey-color class scores into [home, away, referee] mass.

    Colors without an explicit mapping count as home (dark) jerseys;
    by default white maps to away and "ref" to referee.
    """
    mapping = dict(_DEFAULT_COLOR_TO_TEAM)
    if color_to_team:
        mapping.update(color_to_team)
    out = np.zeros(3)
    slot = {"home": 0, "away": 1, "referee": 2}
    for color, prob in color_probs.items():
        team = mapping.get(color, "home")
        out[slot[team]] += float(prob)
    return out
