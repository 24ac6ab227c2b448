"""Model backends: an OpenAI-compatible HTTP client and a scripted stand-in.

Both expose complete(prompt, params) where prompt carries either chat turns
or one completion text (see engine.PromptBundle); neither imports the engine,
so the prompt is duck-typed on mode/messages/text/flat_text().
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import requests

logger = logging.getLogger(__name__)


class TransportError(Exception):
    """The backend stayed unreachable or kept failing after retries."""


class AuthError(Exception):
    """Missing or rejected credentials."""


class BackendScriptExhausted(Exception):
    """The scripted backend ran out of canned replies."""


class ScriptMatchError(Exception):
    """A scripted reply's match string was absent from the prompt."""


def estimate_tokens(text: str) -> int:
    """Approximate token count: ceil(len / 4). Provider tokenizers are not
    available offline; callers treat this as the budget reference."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 2
    backoff_secs: float = 1.0


@dataclass(frozen=True)
class ModelParams:
    model_name: str = ""
    temperature: float = 0.0
    max_response_tokens: int = 1024
    request_timeout: float = 60.0
    retry_policy: RetryPolicy = RetryPolicy()


@dataclass(frozen=True)
class ModelResponse:
    text: str
    prompt_tokens: int
    response_tokens: int
    latency: float
    backend_id: str


class AuditLog:
    """Append-only JSONL of every request/response pair."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def record(
        self,
        iteration: int | None,
        role: str | None,
        prompt_text: str,
        response: ModelResponse,
    ) -> None:
        entry = {
            "iteration": iteration,
            "role": role,
            "prompt": prompt_text,
            "response": response.text,
            "tokens": {
                "prompt": response.prompt_tokens,
                "response": response.response_tokens,
            },
            "ts": time.time(),
        }
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(entry, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class ScriptEntry:
    reply: str
    match: str | None = None


class ScriptedBackend:
    """Replays canned responses in order; match substrings, when present,
    are asserted against the prompt text."""

    backend_id = "script"

    def __init__(self, entries: list[ScriptEntry], audit: AuditLog | None = None):
        self.entries = list(entries)
        self.audit = audit
        self._cursor = 0
        self.calls = 0

    @classmethod
    def from_file(cls, path: str | Path, audit: AuditLog | None = None) -> ScriptedBackend:
        raw = json.loads(Path(path).read_text("utf-8"))
        if not isinstance(raw, list):
            raise ValueError(f"script file {path} must hold a JSON array")
        entries = []
        for i, item in enumerate(raw):
            if not isinstance(item, dict) or "reply" not in item:
                raise ValueError(f"script entry {i} in {path} lacks a reply")
            entries.append(ScriptEntry(reply=item["reply"], match=item.get("match")))
        return cls(entries, audit=audit)

    def complete(
        self,
        prompt,
        params: ModelParams,
        *,
        iteration: int | None = None,
        role: str | None = None,
    ) -> ModelResponse:
        del params
        flat = prompt.flat_text()
        if self._cursor >= len(self.entries):
            raise BackendScriptExhausted(
                f"script exhausted after {len(self.entries)} replies"
            )
        entry = self.entries[self._cursor]
        if entry.match is not None and entry.match not in flat:
            raise ScriptMatchError(
                f"reply {self._cursor} expected prompt to contain {entry.match!r}"
            )
        self._cursor += 1
        self.calls += 1
        response = ModelResponse(
            text=entry.reply,
            prompt_tokens=estimate_tokens(flat),
            response_tokens=estimate_tokens(entry.reply),
            latency=0.0,
            backend_id=self.backend_id,
        )
        if self.audit:
            self.audit.record(iteration, role, flat, response)
        return response


RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


class HttpBackend:
    """OpenAI-compatible client: /chat/completions for chat prompts,
    /completions for completion prompts. Retries transport faults, 5xx and
    429 only; content-level problems surface to the caller untouched."""

    def __init__(
        self,
        url: str,
        model: str,
        credential_env: str = "OPENAI_API_KEY",
        audit: AuditLog | None = None,
        session: requests.Session | None = None,
    ):
        self.url = url.rstrip("/")
        self.model = model
        self.credential_env = credential_env
        self.audit = audit
        self.session = session or requests.Session()
        self.backend_id = f"http:{model}"
        self.calls = 0

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.credential_env, "")
        if not key:
            raise AuthError(
                f"credential environment variable {self.credential_env} is not set"
            )
        headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(
        self,
        prompt,
        params: ModelParams,
        *,
        iteration: int | None = None,
        role: str | None = None,
    ) -> ModelResponse:
        model = params.model_name or self.model
        if prompt.mode == "chat":
            endpoint = f"{self.url}/chat/completions"
            payload = {
                "model": model,
                "messages": [
                    {"role": m.role, "content": m.content} for m in prompt.messages
                ],
                "temperature": params.temperature,
                "max_tokens": params.max_response_tokens,
            }
        else:
            endpoint = f"{self.url}/completions"
            payload = {
                "model": model,
                "prompt": prompt.text,
                "temperature": params.temperature,
                "max_tokens": params.max_response_tokens,
            }
        headers = self._headers()
        policy = params.retry_policy
        started = time.monotonic()
        last_fault = "no attempt made"
        for attempt in range(policy.max_retries + 1):
            if attempt:
                time.sleep(policy.backoff_secs * attempt)
            try:
                http = self.session.post(
                    endpoint,
                    json=payload,
                    headers=headers,
                    timeout=params.request_timeout,
                )
            except requests.RequestException as exc:
                last_fault = f"transport: {exc}"
                logger.warning("attempt %d failed: %s", attempt + 1, last_fault)
                continue
            if http.status_code in (401, 403):
                raise AuthError(f"backend rejected credentials ({http.status_code})")
            if http.status_code in RETRYABLE_STATUS:
                last_fault = f"status {http.status_code}"
                logger.warning("attempt %d failed: %s", attempt + 1, last_fault)
                continue
            if http.status_code != 200:
                raise TransportError(
                    f"backend returned {http.status_code}: {http.text[:300]}"
                )
            response = self._parse(http, prompt, started)
            self.calls += 1
            if self.audit:
                self.audit.record(iteration, role, prompt.flat_text(), response)
            return response
        raise TransportError(
            f"backend unreachable after {policy.max_retries + 1} attempts ({last_fault})"
        )

    def _parse(self, http, prompt, started: float) -> ModelResponse:
        body = http.json()
        choice = body["choices"][0]
        if "message" in choice:
            text = choice["message"].get("content") or ""
        else:
            text = choice.get("text") or ""
        usage = body.get("usage", {})
        flat = prompt.flat_text()
        return ModelResponse(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", estimate_tokens(flat))),
            response_tokens=int(usage.get("completion_tokens", estimate_tokens(text))),
            latency=time.monotonic() - started,
            backend_id=self.backend_id,
        )


def make_backend(
    kind: str,
    *,
    url: str | None = None,
    model: str | None = None,
    credential_env: str = "OPENAI_API_KEY",
    script_path: str | None = None,
    audit: AuditLog | None = None,
):
    if kind == "script":
        if not script_path:
            raise ValueError("scripted backend needs a script path")
        return ScriptedBackend.from_file(script_path, audit=audit)
    if kind == "http":
        if not url:
            raise ValueError("http backend needs a url")
        return HttpBackend(
            url=url, model=model or "", credential_env=credential_env, audit=audit
        )
    raise ValueError(f"unknown backend kind {kind!r}")
