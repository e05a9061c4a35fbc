"""Template loading and rendering into multimodal chat messages.

Templates are plain text with ``{name}`` placeholders. A placeholder may be
bound to a string or to a list of parts (text and images), which is how
frames get interleaved with segment labels.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence, Union

from .backend import ChatMessage, ImagePart, Part, TextPart

SYSTEM_PROMPT = "You are a careful assistant that answers questions about videos."

REWARD_FIRST_TAG = "# Task: segment relevance scoring\n"
REWARD_FOLLOWUP_TAG = "# Task: segment relevance scoring (follow-up round)"
EXPLORE_TAG = "# Task: video exploration"
SELECT_FRAMES_TAG = "# Task: frame selection"
FORCE_ANSWER = "You must answer now. Reply with ANSWER: <your answer>."

TEMPLATE_NAMES = ("reward_first", "reward_followup", "explore", "select_frames")

_PLACEHOLDER = re.compile(r"\{(\w+)\}")

Value = Union[str, Sequence[Part]]


@dataclass(frozen=True)
class Templates:
    reward_first: str
    reward_followup: str
    explore: str
    select_frames: str

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "Templates":
        """Bundled templates, with any ``<name>.txt`` in ``directory`` taking precedence."""
        texts = {}
        bundled = resources.files("vca") / "templates"
        for name in TEMPLATE_NAMES:
            override = Path(directory) / f"{name}.txt" if directory else None
            if override is not None and override.exists():
                texts[name] = override.read_text()
            else:
                texts[name] = (bundled / f"{name}.txt").read_text()
        return cls(**texts)


_DEFAULT: Templates | None = None


def default_templates() -> Templates:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = Templates.load()
    return _DEFAULT


def render(template: str, values: Mapping[str, Value]) -> list[Part]:
    """Substitute placeholders; unknown placeholders are left verbatim."""
    parts: list[Part] = []
    pos = 0
    for m in _PLACEHOLDER.finditer(template):
        name = m.group(1)
        if name not in values:
            continue
        _append_text(parts, template[pos : m.start()])
        value = values[name]
        if isinstance(value, str):
            _append_text(parts, value)
        else:
            for p in value:
                if isinstance(p, TextPart):
                    _append_text(parts, p.text)
                else:
                    parts.append(p)
        pos = m.end()
    _append_text(parts, template[pos:])
    return parts


def _append_text(parts: list[Part], text: str) -> None:
    if not text:
        return
    if parts and isinstance(parts[-1], TextPart):
        parts[-1] = TextPart(parts[-1].text + text)
    else:
        parts.append(TextPart(text))


def as_messages(parts: list[Part]) -> list[ChatMessage]:
    return [ChatMessage.text("system", SYSTEM_PROMPT), ChatMessage("user", tuple(parts))]


def fmt_time(seconds: float) -> str:
    return f"{seconds:.1f}s"


def span_text(start: int, end: int, fps: float) -> str:
    return f"frames [{start}, {end}) | {fmt_time(start / fps)}-{fmt_time(end / fps)}"


def frame_caption(index: int, fps: float) -> str:
    return f"Frame {index} ({fmt_time(index / fps)}):"


def one_line(text: str) -> str:
    return " ".join(text.split())
