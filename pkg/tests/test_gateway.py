import json
import threading
import time
from collections import Counter

import httpx
import pytest

from rcacalib.errors import BackendError, ConfigurationError, TransportError, ValidationError
from rcacalib.gateway import (UNMATCHED, CompletionRequest, HttpChatBackend, ResponseCache,
                              complete, make_simulated_backend, request_key)


def req(prompt="Task: COE_SCORE question", n=1, seed=0, temperature=1.0):
    return CompletionRequest((("user", prompt),), temperature, 16, n, seed)


def test_simulated_cardinality_and_determinism():
    b = make_simulated_backend({"COE_SCORE": ["A", "B"]}, seed=1)
    out = complete(req(n=3), b)
    assert len(out.completions) == 3 and not out.cached
    assert complete(req(n=3), b).completions == out.completions


def test_simulated_weighted_frequency():
    b = make_simulated_backend({"COE_SCORE": (["A", "B"], [0.75, 0.25])}, seed=9)
    counts = Counter(complete(req(n=1000), b).completions)
    assert 0.70 <= counts["A"] / 1000 <= 0.80


def test_simulated_unmatched_sentinel():
    b = make_simulated_backend({"COE_SCORE": ["A"]})
    assert complete(req("something else", n=2), b).completions == (UNMATCHED, UNMATCHED)


def test_two_handles_agree():
    script = {"X": {"responses": ["1", "2", "3"], "weights": [1, 2, 3]}}
    a, b = make_simulated_backend(script, 4), make_simulated_backend(script, 4)
    for s in range(5):
        assert complete(req("X", 10, s), a).completions == complete(req("X", 10, s), b).completions


def test_first_matching_key_wins_and_callables():
    b = make_simulated_backend({"foo": ["first"], "foo bar": ["second"],
                                "dyn": lambda prompt, rng: prompt.upper()})
    assert complete(req("foo bar"), b).completions == ("first",)
    assert complete(req("dyn"), b).completions == ("DYN",)


def test_empty_script_rejected():
    with pytest.raises(ValidationError):
        make_simulated_backend({})


def test_cache_hit_is_identical_and_skips_backend(tmp_path):
    cache = ResponseCache(tmp_path / "r.jsonl")
    b = make_simulated_backend({"Q": ["x", "y", "z"]}, 2, cache)
    first = complete(req("Q", 5), b)
    second = complete(req("Q", 5), b)
    assert second.cached and second.completions == first.completions
    assert b.calls == 1
    # a fresh process sees the persisted entry
    b2 = make_simulated_backend({"Q": ["other"]}, 2, ResponseCache(tmp_path / "r.jsonl"))
    assert complete(req("Q", 5), b2).completions == first.completions
    assert b2.calls == 0


def test_cache_key_covers_sampling_params():
    k = request_key("b", req())
    assert k != request_key("b", req(temperature=0.5))
    assert k != request_key("b", req(n=2))
    assert k != request_key("other", req())


def chat_response(texts):
    return httpx.Response(200, json={"choices": [{"message": {"content": t}} for t in texts]})


def http_backend(handler, **kw):
    kw.setdefault("sleep", lambda s: None)
    return HttpChatBackend("http://llm.test/v1/chat/completions", "gpt-test",
                           transport=httpx.MockTransport(handler), **kw)


def test_retry_429_then_200():
    calls = []

    def handler(request):
        calls.append(json.loads(request.content))
        return httpx.Response(429) if len(calls) == 1 else chat_response(["A"])

    out = complete(req(), http_backend(handler))
    assert out.completions == ("A",) and not out.cached
    assert len(calls) == 2
    body = calls[0]
    assert body["model"] == "gpt-test" and body["n"] == 1
    assert body["messages"] == [{"role": "user", "content": "Task: COE_SCORE question"}]


def test_retries_exhausted():
    n = []
    b = http_backend(lambda r: n.append(1) or httpx.Response(503))
    with pytest.raises(TransportError):
        b.complete(req())
    assert len(n) == 5


def test_backoff_grows():
    delays = []
    b = http_backend(lambda r: httpx.Response(500), sleep=delays.append, backoff_base=1.0)
    with pytest.raises(TransportError):
        b.complete(req())
    assert len(delays) == 4
    assert all(0.5 * 2 ** i <= d <= 2 ** i for i, d in enumerate(delays))


def test_non_retriable_status():
    b = http_backend(lambda r: httpx.Response(400, text="bad request body"))
    with pytest.raises(BackendError) as info:
        b.complete(req())
    assert info.value.status == 400 and "bad request" in str(info.value)


def test_missing_credential_fails_before_request(monkeypatch):
    monkeypatch.delenv("RCACALIB_TEST_KEY", raising=False)
    seen = []
    b = http_backend(lambda r: seen.append(r) or chat_response(["A"]),
                     credential_env_var="RCACALIB_TEST_KEY")
    with pytest.raises(ConfigurationError, match="RCACALIB_TEST_KEY"):
        b.complete(req())
    assert not seen


def test_credential_sent_as_bearer(monkeypatch):
    monkeypatch.setenv("RCACALIB_TEST_KEY", "sekret")
    seen = []
    b = http_backend(lambda r: seen.append(r.headers["authorization"]) or chat_response(["B"]),
                     credential_env_var="RCACALIB_TEST_KEY")
    b.complete(req())
    assert seen == ["Bearer sekret"]


def test_short_batches_are_topped_up():
    def handler(request):
        n = json.loads(request.content)["n"]
        return chat_response(["x"] * min(n, 2))

    assert len(http_backend(handler).complete(req(n=5)).completions) == 5


def test_in_flight_bound():
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}

    def handler(request):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        time.sleep(0.02)
        with lock:
            state["now"] -= 1
        return chat_response(["A"])

    b = http_backend(handler, max_in_flight=2)
    threads = [threading.Thread(target=b.complete, args=(req(seed=i),)) for i in range(10)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert state["peak"] == 2


def test_request_validation():
    with pytest.raises(ValidationError):
        CompletionRequest((("robot", "hi"),))
    with pytest.raises(ValidationError):
        CompletionRequest((("user", "hi"),), n_samples=0)
