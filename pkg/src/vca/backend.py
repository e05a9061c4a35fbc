"""Chat-completion backends used by both the reward model and the explorer."""

from __future__ import annotations

import base64
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence, Union

import httpx

from .errors import AuthError, ProtocolError, TransportError
from .frames import Image

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    image: Image


Part = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class ChatMessage:
    role: str
    parts: tuple[Part, ...]

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.parts:
            raise ValueError("a message needs at least one part")

    @classmethod
    def text(cls, role: str, text: str) -> "ChatMessage":
        return cls(role, (TextPart(text),))

    @property
    def text_content(self) -> str:
        return "".join(p.text for p in self.parts if isinstance(p, TextPart))

    @property
    def images(self) -> list[Image]:
        return [p.image for p in self.parts if isinstance(p, ImagePart)]


class Backend(Protocol):
    def complete(self, messages: Sequence[ChatMessage]) -> str: ...


@dataclass
class BackendConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4o"
    temperature: float = 0.5
    api_key_env: str = "OPENAI_API_KEY"
    max_retries: int = 5
    timeout: float = 120.0
    max_in_flight: int = 4
    # forwarded verbatim into the request body (max_tokens, etc.)
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 <= self.temperature <= 2:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


# -- wire format --------------------------------------------------------------


def data_url(image: Image) -> str:
    return f"data:{image.media_type};base64,{base64.b64encode(image.data).decode('ascii')}"


def parse_data_url(url: str) -> Image:
    if not url.startswith("data:") or ";base64," not in url:
        raise ProtocolError(f"unsupported image url {url[:40]!r}")
    head, payload = url[5:].split(";base64,", 1)
    return Image(head, base64.b64decode(payload))


def message_to_wire(msg: ChatMessage) -> dict:
    content = []
    for p in msg.parts:
        if isinstance(p, TextPart):
            content.append({"type": "text", "text": p.text})
        else:
            content.append({"type": "image_url", "image_url": {"url": data_url(p.image)}})
    return {"role": msg.role, "content": content}


def message_from_wire(obj: dict) -> ChatMessage:
    content = obj.get("content")
    if isinstance(content, str):
        return ChatMessage.text(obj["role"], content)
    parts: list[Part] = []
    for item in content or []:
        kind = item.get("type")
        if kind == "text":
            parts.append(TextPart(item["text"]))
        elif kind in ("image_url", "image"):
            url = item["image_url"]["url"] if kind == "image_url" else item["image"]
            parts.append(ImagePart(parse_data_url(url)))
        else:
            raise ProtocolError(f"unknown content part type {kind!r}")
    return ChatMessage(obj["role"], tuple(parts))


def build_request(config: BackendConfig, messages: Sequence[ChatMessage]) -> dict:
    body = {
        "model": config.model,
        "temperature": config.temperature,
        "messages": [message_to_wire(m) for m in messages],
    }
    body.update(config.extra)
    return body


def read_response(body: Any) -> str:
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"response lacks choices[0].message.content: {exc!r}") from None
    if isinstance(content, list):
        content = "".join(c.get("text", "") for c in content if isinstance(c, dict))
    if not isinstance(content, str):
        raise ProtocolError(f"content is {type(content).__name__}, expected text")
    return content


# -- remote implementation ----------------------------------------------------

RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


class RemoteBackend:
    """HTTP chat-completion client with bounded concurrency and retry/backoff."""

    def __init__(
        self,
        config: BackendConfig,
        *,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ) -> None:
        self.config = config
        self._client = httpx.Client(timeout=config.timeout, transport=transport)
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._lock = threading.Lock()
        self.retries = 0
        self.requests = 0

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "RemoteBackend":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env) if self.config.api_key_env else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def backoff(self, attempt: int) -> float:
        base = 1.0 * 2**attempt
        return base + self._rng.uniform(0, base / 2)

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        if not messages:
            raise ValueError("messages must be non-empty")
        body = build_request(self.config, messages)
        attempt = 0
        while True:
            with self._slots:
                with self._lock:
                    self.requests += 1
                try:
                    resp = self._client.post(self.config.endpoint, json=body, headers=self._headers())
                except httpx.TransportError as exc:
                    resp, failure = None, f"{type(exc).__name__}: {exc}"
            if resp is not None:
                if resp.status_code in (401, 403):
                    raise AuthError(f"credentials rejected (HTTP {resp.status_code})")
                if resp.status_code < 300:
                    try:
                        return read_response(resp.json())
                    except ValueError as exc:
                        raise ProtocolError(f"response is not JSON: {exc}") from None
                if resp.status_code not in RETRYABLE_STATUS:
                    raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                failure = f"HTTP {resp.status_code}"
            if attempt >= self.config.max_retries:
                raise TransportError(f"giving up after {attempt} retries: {failure}")
            delay = self.backoff(attempt)
            if resp is not None and resp.headers.get("retry-after", "").isdigit():
                delay = max(delay, float(resp.headers["retry-after"]))
            log.warning("chat request failed (%s); retry %d in %.1fs", failure, attempt + 1, delay)
            self._sleep(delay)
            attempt += 1
            with self._lock:
                self.retries += 1
