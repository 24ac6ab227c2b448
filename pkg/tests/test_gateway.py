import json

import pytest

from tracerepair.engine import DebugConfig, Message, PromptBundle
from tracerepair.gateway import (
    AuditLog,
    AuthError,
    BackendScriptExhausted,
    HttpBackend,
    ModelParams,
    RetryPolicy,
    ScriptEntry,
    ScriptMatchError,
    ScriptedBackend,
    TransportError,
    estimate_tokens,
    make_backend,
)

PARAMS = ModelParams(retry_policy=RetryPolicy(max_retries=2, backoff_secs=0.0))


def chat_bundle(content="hello backend"):
    messages = (Message(role="user", content=content),)
    return PromptBundle(
        mode="chat",
        messages=messages,
        text=None,
        token_estimate=estimate_tokens(content),
        presented_blocks=(),
    )


def completion_bundle(text="complete me"):
    return PromptBundle(
        mode="completion",
        messages=(),
        text=text,
        token_estimate=estimate_tokens(text),
        presented_blocks=(),
    )


# --- scripted backend --------------------------------------------------------


def test_scripted_replays_in_order_and_counts_calls():
    backend = ScriptedBackend([ScriptEntry("one"), ScriptEntry("two")])
    first = backend.complete(chat_bundle(), PARAMS)
    second = backend.complete(chat_bundle(), PARAMS)
    assert (first.text, second.text) == ("one", "two")
    assert backend.calls == 2
    assert first.backend_id == "script"
    assert first.prompt_tokens == estimate_tokens("hello backend")
    assert first.response_tokens == estimate_tokens("one")


def test_scripted_match_guard():
    backend = ScriptedBackend([ScriptEntry("reply", match="magic word")])
    with pytest.raises(ScriptMatchError):
        backend.complete(chat_bundle("nothing relevant"), PARAMS)
    backend2 = ScriptedBackend([ScriptEntry("reply", match="magic word")])
    response = backend2.complete(chat_bundle("the magic word appears"), PARAMS)
    assert response.text == "reply"


def test_scripted_exhaustion():
    backend = ScriptedBackend([ScriptEntry("only")])
    backend.complete(chat_bundle(), PARAMS)
    with pytest.raises(BackendScriptExhausted):
        backend.complete(chat_bundle(), PARAMS)


def test_scripted_from_file_validates(tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps([{"reply": "a"}, {"reply": "b", "match": "x"}]))
    backend = ScriptedBackend.from_file(good)
    assert len(backend.entries) == 2
    assert backend.entries[1].match == "x"

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps([{"match": "no reply here"}]))
    with pytest.raises(ValueError):
        ScriptedBackend.from_file(bad)

    not_list = tmp_path / "not_list.json"
    not_list.write_text(json.dumps({"reply": "a"}))
    with pytest.raises(ValueError):
        ScriptedBackend.from_file(not_list)


def test_audit_log_records_exchanges(tmp_path):
    audit = AuditLog(tmp_path / "nested" / "audit.jsonl")
    backend = ScriptedBackend([ScriptEntry("answer")], audit=audit)
    backend.complete(chat_bundle("prompt body"), PARAMS, iteration=3, role="verdict")
    lines = (tmp_path / "nested" / "audit.jsonl").read_text().splitlines()
    assert len(lines) == 1
    entry = json.loads(lines[0])
    assert entry["iteration"] == 3
    assert entry["role"] == "verdict"
    assert entry["prompt"] == "prompt body"
    assert entry["response"] == "answer"
    assert entry["tokens"] == {
        "prompt": estimate_tokens("prompt body"),
        "response": estimate_tokens("answer"),
    }
    assert "ts" in entry


# --- http backend ------------------------------------------------------------


class FakeResponse:
    def __init__(self, status_code, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload or {}
        self.text = text or json.dumps(self._payload)

    def json(self):
        return self._payload


class FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.requests.append(
            {"url": url, "json": json, "headers": headers, "timeout": timeout}
        )
        reply = self.responses.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply


def chat_payload(content, usage=None):
    body = {"choices": [{"message": {"content": content}}]}
    if usage:
        body["usage"] = usage
    return body


def test_http_chat_request_shape(monkeypatch):
    monkeypatch.setenv("TEST_API_KEY", "sk-fake")
    session = FakeSession(
        [FakeResponse(200, chat_payload("fixed!", {"prompt_tokens": 11, "completion_tokens": 7}))]
    )
    backend = HttpBackend(
        "https://api.example.test/v1/", "m-1", credential_env="TEST_API_KEY", session=session
    )
    response = backend.complete(chat_bundle("fix it"), PARAMS, iteration=0, role="verdict")
    assert response.text == "fixed!"
    assert (response.prompt_tokens, response.response_tokens) == (11, 7)
    request = session.requests[0]
    assert request["url"] == "https://api.example.test/v1/chat/completions"
    assert request["json"]["messages"] == [{"role": "user", "content": "fix it"}]
    assert request["json"]["model"] == "m-1"
    assert request["headers"]["Authorization"] == "Bearer sk-fake"
    assert request["timeout"] == PARAMS.request_timeout


def test_http_completion_endpoint(monkeypatch):
    monkeypatch.setenv("TEST_API_KEY", "sk-fake")
    session = FakeSession(
        [FakeResponse(200, {"choices": [{"text": " done"}]})]
    )
    backend = HttpBackend(
        "https://api.example.test/v1", "m-1", credential_env="TEST_API_KEY", session=session
    )
    response = backend.complete(completion_bundle("finish this"), PARAMS)
    assert response.text == " done"
    request = session.requests[0]
    assert request["url"] == "https://api.example.test/v1/completions"
    assert request["json"]["prompt"] == "finish this"
    # without usage info the estimates kick in
    assert response.prompt_tokens == estimate_tokens("finish this")
    assert response.response_tokens == estimate_tokens(" done")


def test_http_missing_credential(monkeypatch):
    monkeypatch.delenv("TEST_API_KEY", raising=False)
    backend = HttpBackend(
        "https://api.example.test", "m", credential_env="TEST_API_KEY",
        session=FakeSession([]),
    )
    with pytest.raises(AuthError):
        backend.complete(chat_bundle(), PARAMS)


def test_http_auth_rejection(monkeypatch):
    monkeypatch.setenv("TEST_API_KEY", "sk-bad")
    session = FakeSession([FakeResponse(401)])
    backend = HttpBackend(
        "https://api.example.test", "m", credential_env="TEST_API_KEY", session=session
    )
    with pytest.raises(AuthError):
        backend.complete(chat_bundle(), PARAMS)


def test_http_retries_retryable_then_succeeds(monkeypatch):
    monkeypatch.setenv("TEST_API_KEY", "sk")
    session = FakeSession(
        [FakeResponse(429), FakeResponse(503), FakeResponse(200, chat_payload("ok"))]
    )
    backend = HttpBackend(
        "https://api.example.test", "m", credential_env="TEST_API_KEY", session=session
    )
    response = backend.complete(chat_bundle(), PARAMS)
    assert response.text == "ok"
    assert len(session.requests) == 3


def test_http_gives_up_after_retries(monkeypatch):
    monkeypatch.setenv("TEST_API_KEY", "sk")
    session = FakeSession([FakeResponse(500)] * 3)
    backend = HttpBackend(
        "https://api.example.test", "m", credential_env="TEST_API_KEY", session=session
    )
    with pytest.raises(TransportError):
        backend.complete(chat_bundle(), PARAMS)
    assert len(session.requests) == 3


def test_http_nonretryable_status_fails_fast(monkeypatch):
    monkeypatch.setenv("TEST_API_KEY", "sk")
    session = FakeSession([FakeResponse(418, text="teapot")])
    backend = HttpBackend(
        "https://api.example.test", "m", credential_env="TEST_API_KEY", session=session
    )
    with pytest.raises(TransportError) as err:
        backend.complete(chat_bundle(), PARAMS)
    assert "418" in str(err.value)
    assert len(session.requests) == 1


# --- factory -----------------------------------------------------------------


def test_make_backend_script(tmp_path):
    script = tmp_path / "s.json"
    script.write_text(json.dumps([{"reply": "hi"}]))
    backend = make_backend("script", script_path=str(script))
    assert isinstance(backend, ScriptedBackend)


def test_make_backend_http():
    backend = make_backend("http", url="https://x.test", model="m")
    assert isinstance(backend, HttpBackend)


def test_make_backend_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError):
        make_backend("script")
    with pytest.raises(ValueError):
        make_backend("http")
    with pytest.raises(ValueError):
        make_backend("telepathy")
