"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class VCAError(Exception):
    """Base class for every error raised by this package."""


class PositionOutOfRange(VCAError):
    pass


class NotInFrontier(VCAError):
    pass


class FrameUnavailable(VCAError):
    def __init__(self, index: int, reason: str = "") -> None:
        self.index = index
        msg = f"frame {index} unavailable"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class DecoderFailure(VCAError):
    def __init__(self, message: str, returncode: int | None = None, stderr: str = "") -> None:
        self.returncode = returncode
        self.stderr = stderr
        super().__init__(message if not stderr else f"{message}\n{stderr.strip()}")


class BackendError(VCAError):
    pass


class TransportError(BackendError):
    pass


class ProtocolError(BackendError):
    pass


class AuthError(BackendError):
    pass


class ScriptMiss(BackendError):
    def __init__(self, request_class: str, detail: str = "") -> None:
        self.request_class = request_class
        super().__init__(f"no script rule matches request class {request_class!r}" + (f" ({detail})" if detail else ""))


class MalformedResponse(VCAError):
    pass


class MalformedDecision(VCAError):
    pass


class UnknownSegment(MalformedDecision):
    def __init__(self, segment_id: int) -> None:
        self.segment_id = segment_id
        super().__init__(f"segment id {segment_id} is not in the candidate set")


class BudgetExhausted(VCAError):
    pass


class ConfigError(VCAError):
    pass


class EpisodeError(VCAError):
    """Wraps a failure inside an episode with the round it happened in."""

    def __init__(self, round_index: int, cause: Exception) -> None:
        self.round_index = round_index
        self.cause = cause
        super().__init__(f"round {round_index}: {type(cause).__name__}: {cause}")
