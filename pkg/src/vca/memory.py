"""Fixed-capacity frame buffer with score-based eviction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .core import FrameRecord

SCORE = "score"
FIFO = "fifo"


def eviction_key(policy: str):
    """Sort key placing the first frame to evict first."""
    if policy == SCORE:
        return lambda f: (f.score, f.acquired_round, f.frame_index)
    if policy == FIFO:
        return lambda f: (f.acquired_round, f.frame_index)
    raise ValueError(f"unknown eviction policy {policy!r}")


@dataclass
class MemoryBuffer:
    capacity: int
    frames: list[FrameRecord] = field(default_factory=list)
    policy: str = SCORE

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        eviction_key(self.policy)
        self.frames = sorted(self.frames, key=lambda f: f.frame_index)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def indices(self) -> list[int]:
        return [f.frame_index for f in self.frames]


def update_memory(
    memory: MemoryBuffer, new_frames: Iterable[FrameRecord]
) -> tuple[MemoryBuffer, list[FrameRecord]]:
    """Insert a round's frames, then evict down to capacity in one batch.

    A frame index already in the buffer keeps the higher-scored record (the
    newer one on an exact tie). Eviction removes the lowest scores first, then
    the oldest acquisition round, then the smallest frame index; under the
    ``fifo`` policy scores are ignored.
    """
    merged = {f.frame_index: f for f in memory.frames}
    for f in new_frames:
        old = merged.get(f.frame_index)
        if old is None or f.score >= old.score:
            merged[f.frame_index] = f
    pool = sorted(merged.values(), key=eviction_key(memory.policy))
    overflow = max(0, len(pool) - memory.capacity)
    evicted, kept = pool[:overflow], pool[overflow:]
    evicted.sort(key=lambda f: f.frame_index)
    return MemoryBuffer(memory.capacity, kept, memory.policy), evicted
