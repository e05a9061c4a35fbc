from __future__ import annotations

import json
import threading
import time

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vca.backend import (
    BackendConfig,
    ChatMessage,
    ImagePart,
    RemoteBackend,
    TextPart,
    build_request,
    message_from_wire,
    message_to_wire,
)
from vca.errors import AuthError, ProtocolError, ScriptMiss, TransportError
from vca.frames import Image
from vca.scripted import Rule, ScriptedBackend, load_script, parse_request, scripted_oracle

OK = {"choices": [{"message": {"role": "assistant", "content": "ANSWER: B"}}]}
MSGS = [ChatMessage.text("user", "hello")]


def stub(statuses, body=OK):
    """Mock transport replying with the given statuses in turn; counts requests."""
    seen = []

    def handler(request: httpx.Request) -> httpx.Response:
        seen.append(json.loads(request.content))
        status = statuses[min(len(seen) - 1, len(statuses) - 1)]
        return httpx.Response(status, json=body if status == 200 else {"error": "x"})

    return httpx.MockTransport(handler), seen


def remote(transport, **kw):
    cfg = BackendConfig(endpoint="http://stub/v1/chat/completions", api_key_env="VCA_TEST_KEY", **kw)
    sleeps = []
    return RemoteBackend(cfg, transport=transport, sleep=sleeps.append), sleeps


def test_retries_rate_limits_then_succeeds():
    transport, seen = stub([429, 429, 200])
    be, sleeps = remote(transport, max_retries=5)
    assert be.complete(MSGS) == "ANSWER: B"
    assert len(seen) == 3 and be.retries == 2
    assert len(sleeps) == 2
    # exponential backoff with jitter: base 1s then 2s, jitter below half the base
    assert 1.0 <= sleeps[0] < 1.5 and 2.0 <= sleeps[1] < 3.0


def test_auth_error_is_not_retried():
    transport, seen = stub([401])
    be, sleeps = remote(transport)
    with pytest.raises(AuthError):
        be.complete(MSGS)
    assert len(seen) == 1 and be.retries == 0 and sleeps == []


def test_gives_up_after_max_retries():
    transport, seen = stub([503])
    be, _ = remote(transport, max_retries=3)
    with pytest.raises(TransportError):
        be.complete(MSGS)
    assert len(seen) == 4 and be.retries == 3


def test_connection_errors_are_retried():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 2:
            raise httpx.ConnectError("refused")
        return httpx.Response(200, json=OK)

    be, _ = remote(httpx.MockTransport(handler))
    assert be.complete(MSGS) == "ANSWER: B"
    assert be.retries == 1


@pytest.mark.parametrize("body", [{}, {"choices": []}, {"choices": [{"message": {}}]}, {"choices": [{"message": {"content": 3}}]}])
def test_malformed_body(body):
    be, _ = remote(httpx.MockTransport(lambda r: httpx.Response(200, json=body)))
    with pytest.raises(ProtocolError):
        be.complete(MSGS)


def test_non_json_body():
    be, _ = remote(httpx.MockTransport(lambda r: httpx.Response(200, text="<html>")))
    with pytest.raises(ProtocolError):
        be.complete(MSGS)


def test_request_shape_and_api_key(monkeypatch):
    monkeypatch.setenv("VCA_TEST_KEY", "sekrit")
    headers = {}

    def handler(request):
        headers.update(request.headers)
        body = json.loads(request.content)
        assert body["model"] == "gpt-4o" and body["temperature"] == 0.5
        assert body["messages"][0]["content"][1]["image_url"]["url"].startswith("data:image/png;base64,")
        return httpx.Response(200, json=OK)

    be, _ = remote(httpx.MockTransport(handler))
    msg = ChatMessage("user", (TextPart("look"), ImagePart(Image("image/png", b"\x89PNG..."))))
    be.complete([msg])
    assert headers["authorization"] == "Bearer sekrit"


def test_in_flight_limit():
    active, peak = [0], [0]
    lock = threading.Lock()

    def handler(request):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        time.sleep(0.02)
        with lock:
            active[0] -= 1
        return httpx.Response(200, json=OK)

    be, _ = remote(httpx.MockTransport(handler), max_in_flight=2)
    threads = [threading.Thread(target=be.complete, args=(MSGS,)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] <= 2


@pytest.mark.parametrize("kw", [{"temperature": 2.5}, {"temperature": -0.1}, {"max_retries": -1}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        BackendConfig(**kw)


def test_default_temperature():
    assert BackendConfig().temperature == 0.5


parts = st.lists(
    st.one_of(
        st.text(min_size=0, max_size=40).map(TextPart),
        st.binary(max_size=64).map(lambda b: ImagePart(Image("image/jpeg", b))),
    ),
    min_size=1,
    max_size=6,
)


@given(role=st.sampled_from(["system", "user", "assistant"]), ps=parts)
def test_wire_round_trip(role, ps):
    msg = ChatMessage(role, tuple(ps))
    wire = json.loads(json.dumps(message_to_wire(msg)))
    assert message_from_wire(wire) == msg


def test_build_request_carries_extra():
    body = build_request(BackendConfig(extra={"max_tokens": 256}), MSGS)
    assert body["max_tokens"] == 256


def test_empty_message_rejected():
    with pytest.raises(ValueError):
        ChatMessage("user", ())


# -- scripted oracle ----------------------------------------------------------


def explore_request(text: str) -> list[ChatMessage]:
    return [ChatMessage.text("user", "# Task: video exploration\n" + text)]


def test_scripted_reply_is_verbatim():
    be = scripted_oracle([{"kind": "explore", "contains": "MARKER-7", "response": "EXPLORE: 3"}])
    assert be.complete(explore_request("... MARKER-7 ...")) == "EXPLORE: 3"


def test_scripted_miss_names_class():
    be = scripted_oracle([{"kind": "explore", "contains": "nothing", "response": "x"}])
    with pytest.raises(ScriptMiss) as err:
        be.complete(explore_request("hello"))
    assert err.value.request_class == "explore"


def test_scripted_is_referentially_transparent():
    be = ScriptedBackend([Rule(lambda req: f"ANSWER: {len(req.text)}", kind="explore")])
    req = explore_request("same text")
    assert be.complete(req) == be.complete(list(req))


def test_load_script_file(tmp_path):
    path = tmp_path / "s.toml"
    path.write_text(
        '[[rule]]\nkind = "explore"\nlabels = ["KEY"]\nresponse = "ANSWER: A"\n\n'
        '[[rule]]\nkind = "explore"\nresponse = "EXPLORE: 1"\n'
    )
    be = load_script(path)
    assert be.complete(explore_request("")) == "EXPLORE: 1"


def test_rule_validation():
    with pytest.raises(ValueError):
        scripted_oracle([{"kind": "nonsense", "response": "x"}])
    with pytest.raises(ValueError):
        scripted_oracle([{"kind": "explore"}])


def test_parse_request_unknown_class():
    assert parse_request([ChatMessage.text("user", "hi")]).kind == "unknown"


def test_episode_over_http_matches_direct_run():
    from vca.backend import message_from_wire
    from vca.orchestrator import EpisodeConfig, run_episode
    from vca.simenv import SyntheticSpec, make_env
    from vca.trace import trace_text

    env = make_env(SyntheticSpec(seed=21, reward_noise=0.2))
    seen_temperatures = set()

    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        seen_temperatures.add(body["temperature"])
        reply = env.oracle.complete([message_from_wire(m) for m in body["messages"]])
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": reply}}]})

    remote = RemoteBackend(BackendConfig(endpoint="http://sim.test/v1/chat/completions"), transport=httpx.MockTransport(handler))
    over_http = run_episode(env.video, env.query, EpisodeConfig(), remote)
    direct = run_episode(env.video, env.query, EpisodeConfig(), make_env(SyntheticSpec(seed=21, reward_noise=0.2)).oracle)
    assert over_http[0] == direct[0]
    assert trace_text(over_http[1]) == trace_text(direct[1])
    assert remote.requests == 2 * len(direct[1].rounds) and seen_temperatures == {0.5}
