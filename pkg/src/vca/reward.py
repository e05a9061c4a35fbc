"""Reward model: prompts, verdict grammar, and the append-only reward history."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

from .backend import Backend, ChatMessage, ImagePart, Part, TextPart
from .core import Segment
from .errors import MalformedResponse
from .frames import Image
from .prompts import (
    Templates,
    as_messages,
    default_templates,
    frame_caption,
    one_line,
    render,
    span_text,
)

FORMAT_INSTRUCTIONS = (
    "Reply with exactly one line per candidate segment, in order, using this format:\n"
    "Segment <number>: <one-sentence explanation> | Score: <integer 0-100>"
)
FORMAT_REMINDER = (
    "Your reply could not be parsed. Reply again with one line for each of the {n} segments, "
    "exactly in the form 'Segment <number>: <explanation> | Score: <integer 0-100>'."
)


@dataclass(frozen=True)
class RewardVerdict:
    items: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        for _, score in self.items:
            if not 0 <= score <= 100:
                raise ValueError(f"score {score} outside [0, 100]")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def scores(self) -> list[int]:
        return [s for _, s in self.items]

    @property
    def explanations(self) -> list[str]:
        return [e for e, _ in self.items]

    @classmethod
    def from_lists(cls, explanations: Sequence[str], scores: Sequence[int]) -> "RewardVerdict":
        return cls(tuple(zip(explanations, scores)))


@dataclass(frozen=True)
class RewardEntry:
    segment_id: int
    start: int
    end: int
    explanation: str
    score: int
    round: int


@dataclass
class RewardHistory:
    entries: list[RewardEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def extend(self, round_index: int, subsegments: Sequence[Segment], verdict: RewardVerdict) -> None:
        if len(subsegments) != len(verdict):
            raise ValueError("verdict length does not match sub-segment count")
        for seg, (text, score) in zip(subsegments, verdict.items):
            self.entries.append(RewardEntry(seg.id, seg.start, seg.end, text, score, round_index))

    def latest(self) -> dict[int, RewardEntry]:
        out: dict[int, RewardEntry] = {}
        for e in self.entries:
            out[e.segment_id] = e
        return out

    def render(self, fps: float = 1.0) -> str:
        if not self.entries:
            return "(none)"
        return "\n".join(
            f"- round {e.round} | Segment id={e.segment_id} | {span_text(e.start, e.end, fps)}"
            f" | score {e.score} | {one_line(e.explanation)}"
            for e in self.entries
        )


def candidate_parts(subsegments: Sequence[Segment], frames: Sequence[Image], fps: float = 1.0) -> list[Part]:
    """Segment labels 1..n with each boundary frame between its two neighbours."""
    parts: list[Part] = []
    for k, seg in enumerate(subsegments, start=1):
        parts.append(TextPart(f"Segment {k}: {span_text(seg.start, seg.end, fps)}\n"))
        if k <= len(frames):
            parts.append(TextPart(frame_caption(seg.end, fps) + "\n"))
            parts.append(ImagePart(frames[k - 1]))
            parts.append(TextPart("\n"))
    return parts


def build_reward_prompt(
    round_index: int,
    query: str,
    subsegments: Sequence[Segment],
    frames: Sequence[Image],
    history: RewardHistory,
    *,
    fps: float = 1.0,
    templates: Templates | None = None,
) -> list[ChatMessage]:
    if round_index < 1:
        raise ValueError("rounds are numbered from 1")
    if len(frames) != len(subsegments) - 1:
        raise ValueError(f"{len(subsegments)} sub-segments need {len(subsegments) - 1} boundary frames, got {len(frames)}")
    tpl = templates or default_templates()
    values = {
        "query": query,
        "candidates": candidate_parts(subsegments, frames, fps),
        "format_instructions": FORMAT_INSTRUCTIONS,
    }
    if round_index == 1:
        return as_messages(render(tpl.reward_first, values))
    values["history"] = history.render(fps)
    return as_messages(render(tpl.reward_followup, values))


_LINE = re.compile(
    r"^[\s*_#>\-]*segment\s+(\d+)[*_]*\s*[:.)\-][*_]*\s*(.*?)\s*\|\s*[*_]*score[*_]*\s*[:=][*_]*\s*(\S+?)[*_.]*\s*$",
    re.IGNORECASE | re.MULTILINE,
)


def parse_reward_response(text: str, n: int) -> RewardVerdict:
    """Extract ``n`` (explanation, score) pairs, ordered by segment label."""
    if n < 1:
        raise ValueError("n must be >= 1")
    found: dict[int, tuple[str, int]] = {}
    for m in _LINE.finditer(text):
        label, explanation, raw = int(m.group(1)), m.group(2).strip(), m.group(3).rstrip("%")
        if not 1 <= label <= n:
            raise MalformedResponse(f"unexpected segment label {label} (expected 1..{n})")
        if label in found:
            raise MalformedResponse(f"segment {label} scored twice")
        if not re.fullmatch(r"\d+", raw):
            raise MalformedResponse(f"segment {label}: score {raw!r} is not an integer")
        score = int(raw)
        if score > 100:
            raise MalformedResponse(f"segment {label}: score {score} outside [0, 100]")
        found[label] = (explanation, score)
    missing = [k for k in range(1, n + 1) if k not in found]
    if missing:
        raise MalformedResponse(f"no score for segment(s) {missing}")
    return RewardVerdict(tuple(found[k] for k in range(1, n + 1)))


def render_verdict(verdict: RewardVerdict) -> str:
    return "\n".join(
        f"Segment {k}: {one_line(text).replace('|', '/')} | Score: {score}"
        for k, (text, score) in enumerate(verdict.items, start=1)
    )


def score_segments(
    query: str,
    subsegments: Sequence[Segment],
    frames: Sequence[Image],
    history: RewardHistory,
    backend: Backend,
    *,
    round_index: int,
    fps: float = 1.0,
    templates: Templates | None = None,
) -> RewardVerdict:
    """Ask the backend to score every sub-segment and record the verdict in ``history``."""
    messages = build_reward_prompt(round_index, query, subsegments, frames, history, fps=fps, templates=templates)
    n = len(subsegments)
    reply = backend.complete(messages)
    try:
        verdict = parse_reward_response(reply, n)
    except MalformedResponse:
        retry = [
            *messages,
            ChatMessage.text("assistant", reply),
            ChatMessage.text("user", FORMAT_REMINDER.format(n=n)),
        ]
        verdict = parse_reward_response(backend.complete(retry), n)
    history.extend(round_index, subsegments, verdict)
    return verdict


def frame_scores(positions: Sequence[int], subsegments: Sequence[Segment], scores: Sequence[int]) -> list[int]:
    """Retention score of each sampled frame: the best score among the sub-segments it bounds."""
    out = []
    for p in positions:
        adjacent = [s for seg, s in zip(subsegments, scores) if seg.start == p or seg.end == p]
        out.append(max(adjacent, default=0))
    return out
