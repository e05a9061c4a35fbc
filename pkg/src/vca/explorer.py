"""The exploration agent: decision prompts and the answer/explore grammar."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .backend import Backend, ChatMessage, ImagePart, Part, TextPart
from .core import CandidateSet, FrameRecord, RewardedSegment
from .errors import MalformedDecision, UnknownSegment
from .memory import MemoryBuffer
from .prompts import (
    FORCE_ANSWER,
    Templates,
    as_messages,
    default_templates,
    frame_caption,
    one_line,
    render,
    span_text,
)

ANSWER = "answer"
EXPLORE = "explore"
FRAMES = "frames"

EXPLORE_INSTRUCTIONS = (
    "If the frames in memory are enough to answer the question, reply with\n"
    "ANSWER: <your answer>\n"
    "Otherwise pick exactly one candidate segment to look at more closely and reply with\n"
    "EXPLORE: <segment id>"
)
SELECT_INSTRUCTIONS = (
    "If the frames in memory are enough to answer the question, reply with\n"
    "ANSWER: <your answer>\n"
    "Otherwise request up to {n} frame indices between 0 and {last_frame} and reply with\n"
    "FRAMES: <index>, <index>, ..."
)
DECISION_REMINDER = (
    "Your reply could not be used ({problem}). Reply with a single line, either "
    "'ANSWER: <your answer>' or '{alt}'."
)


@dataclass(frozen=True)
class Decision:
    kind: str
    answer: str | None = None
    segment_id: int | None = None
    indices: tuple[int, ...] = ()

    @classmethod
    def answer_(cls, text: str) -> "Decision":
        return cls(ANSWER, answer=text)

    @classmethod
    def explore(cls, segment_id: int) -> "Decision":
        return cls(EXPLORE, segment_id=segment_id)

    @classmethod
    def frames(cls, indices: Iterable[int]) -> "Decision":
        return cls(FRAMES, indices=tuple(indices))

    def as_dict(self) -> dict:
        if self.kind == ANSWER:
            return {"kind": ANSWER, "answer": self.answer}
        if self.kind == EXPLORE:
            return {"kind": EXPLORE, "segment_id": self.segment_id}
        return {"kind": FRAMES, "indices": list(self.indices)}


_MARKER = re.compile(r"\b(ANSWER|EXPLORE|FRAMES)\b[*_]*\s*[:：]", re.IGNORECASE)


def parse_decision(text: str, *, allow_frames: bool = False) -> Decision:
    """Read ``ANSWER: ...`` / ``EXPLORE: <id>`` (or ``FRAMES: i, j``); the last marker wins."""
    markers = [m for m in _MARKER.finditer(text) if allow_frames or m.group(1).upper() != "FRAMES"]
    if not markers:
        raise MalformedDecision("reply contains no ANSWER or EXPLORE marker")
    m = markers[-1]
    kind = m.group(1).upper()
    rest = text[m.end() :]
    if kind == "ANSWER":
        lines = [ln.strip() for ln in rest.splitlines()]
        payload = next((ln for ln in lines if ln), "")
        payload = payload.strip("*_` \t")
        if not payload:
            raise MalformedDecision("ANSWER marker with no answer")
        return Decision.answer_(payload)
    if kind == "EXPLORE":
        got = re.match(r"[\s*_`]*(?:segment\s*)?(?:id\s*[=:]?\s*)?#?\s*(-?\d+)\b", rest, re.IGNORECASE)
        if not got:
            raise MalformedDecision(f"EXPLORE must name an integer segment id, got {rest[:30].strip()!r}")
        return Decision.explore(int(got.group(1)))
    line = rest.strip().splitlines()[0] if rest.strip() else ""
    tokens = re.findall(r"-?\d+(?:\.\d+)?", line)
    if not tokens or any(not re.fullmatch(r"-?\d+", t) for t in tokens):
        raise MalformedDecision(f"FRAMES must list integer frame indices, got {line[:40]!r}")
    return Decision.frames(int(t) for t in tokens)


def render_decision(decision: Decision) -> str:
    if decision.kind == ANSWER:
        return f"ANSWER: {decision.answer}"
    if decision.kind == EXPLORE:
        return f"EXPLORE: {decision.segment_id}"
    return "FRAMES: " + ", ".join(str(i) for i in decision.indices)


def candidate_line(entry: RewardedSegment, fps: float, with_id: bool = True) -> str:
    seg = entry.segment
    head = f"Segment id={seg.id} | " if with_id else ""
    line = head + span_text(seg.start, seg.end, fps)
    if entry.score is not None:
        line += f" | score {entry.score}"
        if entry.explanation:
            line += f" | {one_line(entry.explanation)}"
    return line


def memory_parts(memory: MemoryBuffer | Sequence[FrameRecord], fps: float) -> list[Part]:
    frames = memory.frames if isinstance(memory, MemoryBuffer) else memory
    parts: list[Part] = []
    for f in sorted(frames, key=lambda f: f.frame_index):
        parts.append(TextPart(frame_caption(f.frame_index, fps) + "\n"))
        parts.append(ImagePart(f.image))
        parts.append(TextPart("\n"))
    return parts or [TextPart("(empty)")]


def build_explore_prompt(
    query: str,
    frontier: CandidateSet,
    memory: MemoryBuffer,
    *,
    fps: float = 1.0,
    force: bool = False,
    templates: Templates | None = None,
) -> list[ChatMessage]:
    if not len(frontier) and not force:
        raise ValueError("cannot ask for a decision over an empty candidate set")
    tpl = templates or default_templates()
    entries = sorted(frontier.entries, key=lambda e: e.segment.start)
    candidates = "\n".join(candidate_line(e, fps) for e in entries) or "(none left)"
    instructions = EXPLORE_INSTRUCTIONS + ("\n" + FORCE_ANSWER if force else "")
    parts = render(
        tpl.explore,
        {
            "query": query,
            "candidates": candidates,
            "memory": memory_parts(memory, fps),
            "format_instructions": instructions,
        },
    )
    return as_messages(parts)


def build_select_prompt(
    query: str,
    intervals: Sequence[RewardedSegment],
    memory: MemoryBuffer,
    *,
    total_frames: int,
    n: int,
    fps: float = 1.0,
    force: bool = False,
    templates: Templates | None = None,
) -> list[ChatMessage]:
    tpl = templates or default_templates()
    candidates = "\n".join(candidate_line(e, fps, with_id=False) for e in intervals) or "(none)"
    instructions = SELECT_INSTRUCTIONS.format(n=n, last_frame=total_frames - 1)
    if force:
        instructions += "\n" + FORCE_ANSWER
    parts = render(
        tpl.select_frames,
        {
            "query": query,
            "total_frames": str(total_frames),
            "last_frame": str(total_frames - 1),
            "n": str(n),
            "candidates": candidates,
            "memory": memory_parts(memory, fps),
            "format_instructions": instructions,
        },
    )
    return as_messages(parts)


def _ask(backend: Backend, messages: list[ChatMessage], check, alt: str) -> Decision:
    reply = backend.complete(messages)
    try:
        return check(reply)
    except MalformedDecision as exc:
        retry = [
            *messages,
            ChatMessage.text("assistant", reply),
            ChatMessage.text("user", DECISION_REMINDER.format(problem=exc, alt=alt)),
        ]
        return check(backend.complete(retry))


def decide(
    query: str,
    frontier: CandidateSet,
    memory: MemoryBuffer,
    backend: Backend,
    *,
    fps: float = 1.0,
    force: bool = False,
    templates: Templates | None = None,
) -> Decision:
    """One exploration decision; the chosen id must belong to ``frontier``."""
    messages = build_explore_prompt(query, frontier, memory, fps=fps, force=force, templates=templates)

    def check(reply: str) -> Decision:
        d = parse_decision(reply)
        if d.kind == EXPLORE and d.segment_id not in frontier:
            raise UnknownSegment(d.segment_id)
        return d

    return _ask(backend, messages, check, "EXPLORE: <segment id>")


def decide_frames(
    query: str,
    intervals: Sequence[RewardedSegment],
    memory: MemoryBuffer,
    backend: Backend,
    *,
    total_frames: int,
    n: int,
    fps: float = 1.0,
    force: bool = False,
    templates: Templates | None = None,
) -> Decision:
    """Decision for the tree-free variant: an answer or up to ``n`` absolute frame indices."""
    messages = build_select_prompt(
        query, intervals, memory, total_frames=total_frames, n=n, fps=fps, force=force, templates=templates
    )

    def check(reply: str) -> Decision:
        d = parse_decision(reply, allow_frames=True)
        if d.kind == EXPLORE:
            raise MalformedDecision("expected FRAMES, got EXPLORE")
        if d.kind == FRAMES:
            bad = [i for i in d.indices if not 0 <= i < total_frames]
            if bad:
                raise MalformedDecision(f"frame indices {bad} outside [0, {total_frames})")
            distinct = sorted(list(dict.fromkeys(d.indices))[:n])
            d = Decision.frames(distinct)
        return d

    return _ask(backend, messages, check, "FRAMES: <index>, <index>, ...")
