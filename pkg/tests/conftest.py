from __future__ import annotations

import pytest

from vca.backend import ChatMessage
from vca.frames import synthetic_video
from vca.scripted import Rule, ScriptedBackend


# filled by the acceptance module, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda ln: int(ln.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


def reward_lines(n: int, scores=None) -> str:
    scores = scores or [10] * n
    return "\n".join(f"Segment {k}: segment {k} | Score: {s}" for k, s in enumerate(scores, start=1))


def uniform_reward(req) -> str:
    return reward_lines(len(req.candidates))


@pytest.fixture
def video():
    return synthetic_video(1000, [(510, 515)], cue_radius=0)


@pytest.fixture
def flat_reward_rules():
    return [Rule(uniform_reward, kind="reward-round-1"), Rule(uniform_reward, kind="reward-followup")]


class Recorder:
    """Wraps a backend and keeps every request it sees."""

    def __init__(self, inner):
        self.inner = inner
        self.requests: list[list[ChatMessage]] = []

    def complete(self, messages):
        self.requests.append(list(messages))
        return self.inner.complete(messages)


@pytest.fixture
def recorder():
    return lambda rules: Recorder(ScriptedBackend(rules))
