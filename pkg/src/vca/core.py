"""Domain types and half-open interval algebra for the exploration tree."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import NotInFrontier, PositionOutOfRange


@dataclass(frozen=True)
class Segment:
    """Half-open frame interval ``[start, end)``; one node of the exploration tree."""

    id: int
    start: int
    end: int
    depth: int = 0
    parent: int | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid segment interval [{self.start}, {self.end})")
        if self.depth < 0:
            raise ValueError("depth must be non-negative")

    @property
    def length(self) -> int:
        return self.end - self.start

    @property
    def interval(self) -> tuple[int, int]:
        return (self.start, self.end)

    def contains(self, other: "Segment") -> bool:
        return self.start <= other.start and other.end <= self.end

    def overlap(self, start: float, end: float) -> float:
        return max(0.0, min(self.end, end) - max(self.start, start))


@dataclass(frozen=True)
class RewardedSegment:
    segment: Segment
    # None only when the episode runs without a reward model.
    score: int | None = None
    explanation: str = ""

    def __post_init__(self) -> None:
        if self.score is not None and not 0 <= self.score <= 100:
            raise ValueError(f"score {self.score} outside [0, 100]")

    @property
    def id(self) -> int:
        return self.segment.id


@dataclass(frozen=True)
class FrameRecord:
    frame_index: int
    image: object
    score: int = 0
    acquired_round: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.score <= 100:
            raise ValueError(f"score {self.score} outside [0, 100]")


class SegmentIds:
    """Monotone per-episode id counter. The root always receives id 0."""

    def __init__(self, start: int = 0) -> None:
        self._counter = itertools.count(start)

    def __call__(self) -> int:
        return next(self._counter)


def root_segment(total_frames: int, ids: SegmentIds | None = None) -> Segment:
    return Segment(id=ids() if ids else 0, start=0, end=total_frames, depth=0, parent=None)


def split_segment(seg: Segment, positions: Sequence[int], ids: SegmentIds | Iterable[int]) -> list[Segment]:
    """Cut ``seg`` at ``positions`` into ``len(positions) + 1`` children.

    ``ids`` supplies fresh segment ids, one per child, in temporal order.
    """
    prev = seg.start
    for p in positions:
        if not prev < p < seg.end:
            raise PositionOutOfRange(
                f"position {p} must be strictly increasing and inside ({seg.start}, {seg.end})"
            )
        prev = p
    next_id = ids if callable(ids) else iter(ids).__next__
    bounds = [seg.start, *positions, seg.end]
    return [
        Segment(id=next_id(), start=a, end=b, depth=seg.depth + 1, parent=seg.id)
        for a, b in zip(bounds, bounds[1:])
    ]


@dataclass(frozen=True)
class CandidateSet:
    """The frontier of selectable segments, kept in temporal order.

    ``retired`` holds leaves that were too short to sample again; together with
    ``entries`` they tile ``root_span`` once the root has been expanded.
    """

    root_span: tuple[int, int]
    entries: tuple[RewardedSegment, ...] = ()
    retired: tuple[Segment, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, segment_id: object) -> bool:
        return any(e.segment.id == segment_id for e in self.entries)

    def get(self, segment_id: int) -> RewardedSegment:
        for e in self.entries:
            if e.segment.id == segment_id:
                return e
        raise NotInFrontier(f"segment {segment_id} is not in the candidate set")

    @property
    def ids(self) -> list[int]:
        return [e.segment.id for e in self.entries]

    def intervals(self, include_retired: bool = False) -> list[tuple[int, int]]:
        segs = [e.segment for e in self.entries]
        if include_retired:
            segs += list(self.retired)
        return sorted(s.interval for s in segs)

    def retire(self, segment_ids: Iterable[int]) -> "CandidateSet":
        drop = set(segment_ids)
        if not drop:
            return self
        kept = tuple(e for e in self.entries if e.segment.id not in drop)
        gone = tuple(e.segment for e in self.entries if e.segment.id in drop)
        retired = tuple(sorted(self.retired + gone, key=lambda s: s.start))
        return CandidateSet(self.root_span, kept, retired)


def replace_in_frontier(
    frontier: CandidateSet, parent: Segment, children: Sequence[RewardedSegment]
) -> CandidateSet:
    """Swap ``parent`` for its ``children`` in the frontier."""
    is_root = parent.interval == frontier.root_span and parent.parent is None
    if not is_root and parent.id not in frontier:
        raise NotInFrontier(f"segment {parent.id} [{parent.start}, {parent.end}) is not in the candidate set")
    if not children:
        raise ValueError("children must be non-empty")
    bounds = [c.segment for c in children]
    if bounds[0].start != parent.start or bounds[-1].end != parent.end or any(
        a.end != b.start for a, b in zip(bounds, bounds[1:])
    ):
        raise ValueError(f"children do not partition [{parent.start}, {parent.end})")
    kept = [e for e in frontier.entries if e.segment.id != parent.id]
    entries = tuple(sorted([*kept, *children], key=lambda e: e.segment.start))
    return CandidateSet(frontier.root_span, entries, frontier.retired)


def union_of(intervals: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    """Merge half-open intervals into a sorted list of disjoint runs."""
    merged: list[list[int]] = []
    for a, b in sorted(intervals):
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged]


def pairwise_disjoint(intervals: Iterable[tuple[int, int]]) -> bool:
    ordered = sorted(intervals)
    return all(a[1] <= b[0] for a, b in zip(ordered, ordered[1:]))


@dataclass
class RoundRecord:
    round: int
    selected: dict | None
    sampled: list[int]
    subsegments: list[list[int]] = field(default_factory=list)
    scores: list[int] | None = None
    explanations: list[str] | None = None
    frontier: list[int] = field(default_factory=list)
    retired: list[int] = field(default_factory=list)
    history_size: int = 0
    memory: list[int] = field(default_factory=list)
    evicted: list[int] = field(default_factory=list)
    decision: dict | None = None
    forced: bool = False


@dataclass
class EpisodeTrace:
    rounds: list[RoundRecord] = field(default_factory=list)
    final_answer: str | None = None
    total_unique_frames: int = 0
    status: str = "running"

    def unique_frames(self) -> set[int]:
        seen: set[int] = set()
        for r in self.rounds:
            seen.update(r.sampled)
        return seen
