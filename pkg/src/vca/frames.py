"""Frame access by index and the per-round sampling rule.

Three backends share one interface: an image directory, an external decoder
invoked through a command template (results cached on disk), and a synthetic
source whose frames are tiny PNGs carrying a text label.
"""

from __future__ import annotations

import fcntl
import functools
import mimetypes
import os
import shlex
import struct
import subprocess
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

from .core import Segment
from .errors import DecoderFailure, FrameUnavailable

FRAME_NAME = "{index:08d}.jpg"


@dataclass(frozen=True)
class Image:
    media_type: str
    data: bytes

    def __repr__(self) -> str:
        return f"Image({self.media_type}, {len(self.data)} bytes)"


class FrameSource(Protocol):
    def fetch(self, index: int) -> Image: ...


@dataclass
class VideoHandle:
    kind: str  # image-dir | decoder | synthetic
    total_frames: int
    source: FrameSource = field(repr=False)
    frame_rate: float = 1.0
    locator: str = ""
    video_id: str = ""

    def __post_init__(self) -> None:
        if self.total_frames < 2:
            raise ValueError(f"video needs at least 2 frames, got {self.total_frames}")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")

    def seconds(self, frame_index: float) -> float:
        return frame_index / self.frame_rate


def uniform_sample(seg: Segment, n: int) -> list[int]:
    """Evenly spaced interior frame indices of ``seg``.

    Returns ``min(n, len - 1)`` indices at ``start + round(i * len / (k + 1))``;
    an empty list means the segment cannot be refined further.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    length = seg.end - seg.start
    k = min(n, length - 1)
    out: list[int] = []
    for i in range(1, k + 1):
        # round half up in exact integer arithmetic
        p = seg.start + (2 * i * length + k + 1) // (2 * (k + 1))
        if seg.start < p < seg.end and (not out or p > out[-1]):
            out.append(p)
    return out


def fetch_frames(video: VideoHandle, indices: Sequence[int]) -> list[Image]:
    out = []
    for i in indices:
        if not 0 <= i < video.total_frames:
            raise FrameUnavailable(i, f"outside [0, {video.total_frames})")
        out.append(video.source.fetch(i))
    return out


def _media_type(path: Path) -> str:
    return mimetypes.guess_type(path.name)[0] or "application/octet-stream"


class ImageDirSource:
    """Frames stored as ``<root>/<index padded to 8 digits>.jpg``."""

    def __init__(self, root: str | os.PathLike) -> None:
        self.root = Path(root)

    def count(self) -> int:
        return sum(1 for p in self.root.iterdir() if p.suffix.lower() in (".jpg", ".jpeg"))

    def fetch(self, index: int) -> Image:
        path = self.root / FRAME_NAME.format(index=index)
        try:
            return Image(_media_type(path), path.read_bytes())
        except FileNotFoundError:
            raise FrameUnavailable(index, f"missing {path}") from None


def open_image_dir(root: str | os.PathLike, frame_rate: float = 1.0, video_id: str | None = None) -> VideoHandle:
    src = ImageDirSource(root)
    if not src.root.is_dir():
        raise FrameUnavailable(0, f"no image directory at {src.root}")
    return VideoHandle(
        kind="image-dir",
        total_frames=src.count(),
        source=src,
        frame_rate=frame_rate,
        locator=str(src.root),
        video_id=video_id or src.root.name,
    )


class DecoderSource:
    """Extracts single frames with an external command and caches them on disk.

    The command template uses ``{input}``, ``{index}`` and ``{output}``
    placeholders, e.g.
    ``ffmpeg -loglevel error -y -i {input} -vf select=eq(n\\,{index}) -vframes 1 {output}``.
    """

    def __init__(self, input_path: str | os.PathLike, command: str, cache_dir: str | os.PathLike, video_id: str) -> None:
        self.input_path = Path(input_path)
        self.command = command
        self.video_id = video_id
        self.cache = Path(cache_dir) / video_id

    def _cached(self, index: int) -> Path:
        return self.cache / FRAME_NAME.format(index=index)

    def fetch(self, index: int) -> Image:
        path = self._cached(index)
        if path.exists():
            return Image(_media_type(path), path.read_bytes())
        if not self.input_path.exists():
            raise DecoderFailure(f"input video {self.input_path} does not exist")
        self.cache.mkdir(parents=True, exist_ok=True)
        with open(self.cache / ".lock", "w") as lock:
            fcntl.flock(lock, fcntl.LOCK_EX)
            try:
                if not path.exists():
                    self._extract(index, path)
            finally:
                fcntl.flock(lock, fcntl.LOCK_UN)
        return Image(_media_type(path), path.read_bytes())

    def _extract(self, index: int, path: Path) -> None:
        tmp = path.with_name(f".tmp-{os.getpid()}-{path.name}")
        argv = [
            part.format(input=self.input_path, index=index, output=tmp)
            for part in shlex.split(self.command)
        ]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True)
        except OSError as exc:
            raise DecoderFailure(f"cannot run decoder {argv[0]!r}: {exc}") from exc
        if proc.returncode != 0:
            tmp.unlink(missing_ok=True)
            raise DecoderFailure(
                f"decoder exited with status {proc.returncode} for frame {index}",
                returncode=proc.returncode,
                stderr=proc.stderr,
            )
        if not tmp.exists():
            raise DecoderFailure(f"decoder produced no output for frame {index}", returncode=0, stderr=proc.stderr)
        os.replace(tmp, path)


def open_decoded(
    input_path: str | os.PathLike,
    command: str,
    cache_dir: str | os.PathLike,
    total_frames: int,
    frame_rate: float = 1.0,
    video_id: str | None = None,
) -> VideoHandle:
    vid = video_id or Path(input_path).stem
    return VideoHandle(
        kind="decoder",
        total_frames=total_frames,
        source=DecoderSource(input_path, command, cache_dir, vid),
        frame_rate=frame_rate,
        locator=str(input_path),
        video_id=vid,
    )


# -- synthetic frames ---------------------------------------------------------

_PNG_SIG = b"\x89PNG\r\n\x1a\n"
_LABEL_KEY = b"Comment"


def _chunk(kind: bytes, payload: bytes) -> bytes:
    return struct.pack(">I", len(payload)) + kind + payload + struct.pack(">I", zlib.crc32(kind + payload))


@functools.lru_cache(maxsize=65536)
def label_png(label: str) -> bytes:
    """A valid 1x1 grayscale PNG whose tEXt chunk holds ``label``."""
    ihdr = struct.pack(">IIBBBBB", 1, 1, 8, 0, 0, 0, 0)
    shade = zlib.crc32(label.encode()) & 0xFF
    return b"".join(
        [
            _PNG_SIG,
            _chunk(b"IHDR", ihdr),
            _chunk(b"tEXt", _LABEL_KEY + b"\x00" + label.encode("latin-1")),
            _chunk(b"IDAT", zlib.compress(bytes([0, shade]))),
            _chunk(b"IEND", b""),
        ]
    )


def read_label(data: bytes) -> str | None:
    """Recover the label written by :func:`label_png`, or None for other images."""
    marker = b"tEXt" + _LABEL_KEY + b"\x00"
    pos = data.find(marker)
    if pos < 0:
        return None
    (length,) = struct.unpack(">I", data[pos - 4 : pos])
    start = pos + len(marker)
    return data[start : pos + 4 + length].decode("latin-1")


class SyntheticSource:
    """Frames labelled ``frame-<i>``, plus ``KEY`` inside key intervals and
    ``NEAR`` within ``cue_radius`` frames of one."""

    def __init__(self, key_intervals: Sequence[tuple[int, int]] = (), cue_radius: int = 0) -> None:
        self.key_intervals = [tuple(k) for k in key_intervals]
        self.cue_radius = cue_radius

    def label(self, index: int) -> str:
        tags = [f"frame-{index}"]
        for a, b in self.key_intervals:
            if a <= index < b:
                tags.append("KEY")
                break
        else:
            r = self.cue_radius
            if r and any(a - r <= index < b + r for a, b in self.key_intervals):
                tags.append("NEAR")
        return " ".join(tags)

    def fetch(self, index: int) -> Image:
        return Image("image/png", label_png(self.label(index)))


def synthetic_video(
    total_frames: int,
    key_intervals: Sequence[tuple[int, int]] = (),
    cue_radius: int = 0,
    frame_rate: float = 1.0,
    video_id: str = "synthetic",
) -> VideoHandle:
    return VideoHandle(
        kind="synthetic",
        total_frames=total_frames,
        source=SyntheticSource(key_intervals, cue_radius),
        frame_rate=frame_rate,
        locator=f"synthetic:{total_frames}",
        video_id=video_id,
    )
