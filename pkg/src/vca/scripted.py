"""Scripted oracle backend: replies are a pure function of the request.

Requests are classified by their task header and parsed back into the
structure the prompt was rendered from (segment intervals, scores, memory
frames and their synthetic labels), so rules can key on any of it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

from .backend import ChatMessage, ImagePart, TextPart
from .errors import ScriptMiss
from .frames import read_label
from .prompts import (
    EXPLORE_TAG,
    FORCE_ANSWER,
    REWARD_FIRST_TAG,
    REWARD_FOLLOWUP_TAG,
    SELECT_FRAMES_TAG,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

REWARD_ROUND_1 = "reward-round-1"
REWARD_FOLLOWUP = "reward-followup"
EXPLORE = "explore"
SELECT_FRAMES = "select-frames"
UNKNOWN = "unknown"
REQUEST_CLASSES = (REWARD_ROUND_1, REWARD_FOLLOWUP, EXPLORE, SELECT_FRAMES)

_REWARD_SEG = re.compile(r"^Segment (\d+): frames \[(\d+), (\d+)\)", re.MULTILINE)
_EXPLORE_SEG = re.compile(r"^Segment id=(\d+) \| frames \[(\d+), (\d+)\) \| \S+(?: \| score (\d+))?", re.MULTILINE)
_INTERVAL = re.compile(r"^frames \[(\d+), (\d+)\) \| \S+(?: \| score (\d+))?", re.MULTILINE)
_FRAME_CAPTION = re.compile(r"Frame (\d+) \([^)]*\):\s*$")
_TOTAL = re.compile(r"video of (\d+) frames")
_UP_TO = re.compile(r"request up to (\d+) frame")


@dataclass(frozen=True)
class Candidate:
    id: int
    start: int
    end: int
    score: int | None = None


@dataclass
class Request:
    kind: str
    text: str
    candidates: list[Candidate] = field(default_factory=list)
    frames: list[tuple[int, str | None]] = field(default_factory=list)
    forced: bool = False
    retry: bool = False
    total_frames: int | None = None
    n_request: int | None = None

    @property
    def labels(self) -> list[str]:
        return [lab for _, lab in self.frames if lab]


def classify(text: str) -> str:
    if REWARD_FOLLOWUP_TAG in text:
        return REWARD_FOLLOWUP
    if REWARD_FIRST_TAG in text:
        return REWARD_ROUND_1
    if EXPLORE_TAG in text:
        return EXPLORE
    if SELECT_FRAMES_TAG in text:
        return SELECT_FRAMES
    return UNKNOWN


def parse_request(messages: Sequence[ChatMessage]) -> Request:
    """Recover the structure of a rendered prompt from its messages."""
    user = next((m for m in messages if m.role == "user"), messages[-1])
    text = user.text_content
    req = Request(kind=classify(text), text=text)
    req.retry = any(m.role == "assistant" for m in messages)
    req.forced = FORCE_ANSWER in text

    # pair every image with the frame caption that precedes it
    last_caption: int | None = None
    for part in user.parts:
        if isinstance(part, TextPart):
            tail = part.text.rstrip().rsplit("\n", 1)[-1].strip()
            m = _FRAME_CAPTION.match(tail)
            last_caption = int(m.group(1)) if m else None
        elif isinstance(part, ImagePart):
            req.frames.append((last_caption if last_caption is not None else -1, read_label(part.image.data)))
            last_caption = None

    if req.kind in (REWARD_ROUND_1, REWARD_FOLLOWUP):
        section = text.split("## Candidate segments", 1)[-1]
        req.candidates = [Candidate(int(k), int(a), int(b)) for k, a, b in _REWARD_SEG.findall(section)]
    elif req.kind == EXPLORE:
        req.candidates = [
            Candidate(int(i), int(a), int(b), int(s) if s else None) for i, a, b, s in _EXPLORE_SEG.findall(text)
        ]
    elif req.kind == SELECT_FRAMES:
        section = text.split("## Scored intervals", 1)[-1].split("## Frames in memory", 1)[0]
        req.candidates = [
            Candidate(k, int(a), int(b), int(s) if s else None)
            for k, (a, b, s) in enumerate(_INTERVAL.findall(section), start=1)
        ]
        if m := _TOTAL.search(text):
            req.total_frames = int(m.group(1))
        if m := _UP_TO.search(text):
            req.n_request = int(m.group(1))
    return req


Responder = Union[str, Callable[[Request], str]]


@dataclass(frozen=True)
class Rule:
    """Matches a request class plus optional substrings; first match wins."""

    response: Responder
    kind: str | None = None
    contains: tuple[str, ...] = ()
    excludes: tuple[str, ...] = ()
    labels: tuple[str, ...] = ()
    forced: bool | None = None

    def matches(self, req: Request) -> bool:
        if self.kind is not None and self.kind != req.kind:
            return False
        if self.forced is not None and self.forced != req.forced:
            return False
        if any(s not in req.text for s in self.contains):
            return False
        if any(s in req.text for s in self.excludes):
            return False
        return all(any(want in lab for lab in req.labels) for want in self.labels)


class ScriptedBackend:
    """A backend whose replies come from an ordered rule list."""

    def __init__(self, rules: Sequence[Rule]) -> None:
        self.rules = list(rules)
        self.calls = 0

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        if not messages:
            raise ValueError("messages must be non-empty")
        self.calls += 1
        req = parse_request(messages)
        for rule in self.rules:
            if rule.matches(req):
                return rule.response(req) if callable(rule.response) else rule.response
        raise ScriptMiss(req.kind)


def scripted_oracle(script: Sequence[Rule] | Sequence[dict]) -> ScriptedBackend:
    rules = [r if isinstance(r, Rule) else rule_from_dict(r) for r in script]
    return ScriptedBackend(rules)


def rule_from_dict(d: dict) -> Rule:
    unknown = set(d) - {"kind", "contains", "excludes", "labels", "forced", "response"}
    if unknown:
        raise ValueError(f"unknown rule keys {sorted(unknown)}")
    kind = d.get("kind")
    if kind is not None and kind not in REQUEST_CLASSES:
        raise ValueError(f"unknown request class {kind!r}; expected one of {REQUEST_CLASSES}")
    if "response" not in d:
        raise ValueError("rule needs a response")

    def as_tuple(v) -> tuple[str, ...]:
        return (v,) if isinstance(v, str) else tuple(v or ())

    return Rule(
        response=str(d["response"]),
        kind=kind,
        contains=as_tuple(d.get("contains")),
        excludes=as_tuple(d.get("excludes")),
        labels=as_tuple(d.get("labels")),
        forced=d.get("forced"),
    )


def load_script(path: str | Path) -> ScriptedBackend:
    """Load a TOML script made of ``[[rule]]`` tables."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return scripted_oracle(doc.get("rule", []))
