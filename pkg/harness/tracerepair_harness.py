"""Line-level tracing harness: one candidate program, one test case, per process.

Reads a single JSON request document on stdin, executes the program's entry
point under a sys.settrace hook, and writes one JSON record per stdout line:
zero or more trace events followed by exactly one terminal result record.
stderr carries free-form diagnostics only. The process exits 0 whenever a
result record was emitted; a malformed request (the only out-of-protocol
failure) exits 2 without emitting anything on stdout.

Stdlib only, single file, so the orchestrating side can pin and ship it.
"""

from __future__ import annotations

import argparse
import ast
import io
import json
import sys
import threading
import time
from contextlib import redirect_stdout

PROTOCOL_VERSION = 1
TRUNCATION_MARKER = "...<truncated>"
RETURN_BINDING = "_ret"
CANDIDATE_FILE = "<candidate>"
MAX_RENDER_DEPTH = 8

STATUS_PASSED = "passed"
STATUS_FAILED_ASSERTION = "failed_assertion"
STATUS_EXCEPTION = "exception"
STATUS_TIMEOUT = "timeout"
STATUS_SYNTAX_ERROR = "syntax_error"

_SIMPLE = (type(None), bool, int, float, complex, range)
_CONTAINERS = (list, tuple, set, frozenset, dict)


class RequestError(Exception):
    """The stdin document is not a well-formed v1 request."""


class _Timeout(BaseException):
    """Raised inside the traced frame when the wall deadline passes; derives
    from BaseException so candidate `except Exception` blocks cannot eat it."""


def render_value(value, max_chars: int) -> str:
    """Deterministic text form of one value, cut to max_chars with a marker."""
    text = _render(value, frozenset(), 0)
    if len(text) > max_chars:
        keep = max(0, max_chars - len(TRUNCATION_MARKER))
        return text[:keep] + TRUNCATION_MARKER
    return text


def _render(value, seen: frozenset, depth: int) -> str:
    kind = type(value)
    if kind in _SIMPLE or kind in (str, bytes, bytearray):
        return repr(value)
    if kind not in _CONTAINERS:
        return f"<unrenderable:{kind.__name__}>"
    if id(value) in seen:
        return "<cycle>"
    if depth >= MAX_RENDER_DEPTH:
        return "<max-depth>"
    seen = seen | {id(value)}
    if kind is list:
        return "[" + ", ".join(_render(v, seen, depth + 1) for v in value) + "]"
    if kind is tuple:
        inner = ", ".join(_render(v, seen, depth + 1) for v in value)
        return f"({inner},)" if len(value) == 1 else f"({inner})"
    if kind is set:
        if not value:
            return "set()"
        # sets have no stable iteration order: sort by rendered text
        items = sorted(_render(v, seen, depth + 1) for v in value)
        return "{" + ", ".join(items) + "}"
    if kind is frozenset:
        if not value:
            return "frozenset()"
        items = sorted(_render(v, seen, depth + 1) for v in value)
        return "frozenset({" + ", ".join(items) + "})"
    pairs = (
        f"{_render(k, seen, depth + 1)}: {_render(v, seen, depth + 1)}"
        for k, v in value.items()
    )
    return "{" + ", ".join(pairs) + "}"


def render_locals(bindings: dict, max_chars: int) -> dict:
    return {name: render_value(value, max_chars) for name, value in bindings.items()}


class Recorder:
    """Buffers trace callbacks as wire-shaped records.

    Each event's locals are read at the owning frame's next callback so they
    reflect the state after the event's line ran; call/exception/return
    snapshots are immediate. Keeps the first and last halves of an
    over-long stream (max_events cap) and counts everything created.
    """

    def __init__(self, max_events: int, max_value_chars: int, deadline: float):
        self.max_value_chars = max_value_chars
        self.deadline = deadline
        head_keep = max(1, max_events // 2)
        self.head_keep = head_keep
        self.tail_keep = max(1, max_events - head_keep)
        self.head: list[dict] = []
        self.tail: list[dict] = []
        self.created = 0
        self.pending: dict[int, dict] = {}
        self.last_kind: dict[int, str] = {}

    def callback(self, frame, event, arg):
        if frame.f_code.co_filename != CANDIDATE_FILE:
            return None
        if time.monotonic() > self.deadline:
            raise _Timeout()
        fid = id(frame)
        waiting = self.pending.pop(fid, None)
        if waiting is not None:
            waiting["locals"] = render_locals(
                dict(frame.f_locals), self.max_value_chars
            )
        record = {
            "v": PROTOCOL_VERSION,
            "kind": "event",
            "seq": self.created,
            "line": frame.f_lineno,
            "event": event,
            "func": frame.f_code.co_name,
            "locals": None,
        }
        if event == "call":
            record["locals"] = render_locals(
                dict(frame.f_locals), self.max_value_chars
            )
        elif event == "line":
            self.pending[fid] = record
        elif event == "exception":
            record["locals"] = render_locals(
                dict(frame.f_locals), self.max_value_chars
            )
        elif event == "return":
            bindings = dict(frame.f_locals)
            # a frame unwinding from an uncaught exception has no return value
            if self.last_kind.get(fid) != "exception":
                bindings[RETURN_BINDING] = arg
            record["locals"] = render_locals(bindings, self.max_value_chars)
        self.last_kind[fid] = event
        self._store(record)
        self.created += 1
        return self.callback

    def _store(self, record: dict) -> None:
        if len(self.head) < self.head_keep:
            self.head.append(record)
            return
        self.tail.append(record)
        if len(self.tail) > self.tail_keep:
            self.tail.pop(0)

    def finish(self) -> tuple[list[dict], bool]:
        for record in self.pending.values():
            if record["locals"] is None:
                record["locals"] = {}
        truncated = self.created > self.head_keep + self.tail_keep
        return self.head + self.tail, truncated


def _validated(document) -> dict:
    if not isinstance(document, dict):
        raise RequestError("request is not an object")
    if document.get("v") != PROTOCOL_VERSION:
        raise RequestError(f"unsupported request version {document.get('v')!r}")
    request: dict = {}
    for key in ("source", "entry_point", "expected"):
        value = document.get(key)
        if not isinstance(value, str):
            raise RequestError(f"{key} must be a string")
        request[key] = value
    call_args = document.get("call_args")
    if not isinstance(call_args, list) or not all(
        isinstance(a, str) for a in call_args
    ):
        raise RequestError("call_args must be a list of strings")
    request["call_args"] = call_args
    trace = document.get("trace")
    if not isinstance(trace, bool):
        raise RequestError("trace must be a boolean")
    request["trace"] = trace
    timeout_secs = document.get("timeout_secs")
    if not isinstance(timeout_secs, (int, float)) or isinstance(timeout_secs, bool):
        raise RequestError("timeout_secs must be a number")
    if timeout_secs <= 0:
        raise RequestError("timeout_secs must be positive")
    request["timeout_secs"] = float(timeout_secs)
    for key in ("max_events", "max_value_chars"):
        value = document.get(key)
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise RequestError(f"{key} must be a positive integer")
        request[key] = value
    return request


def run_request(request: dict) -> tuple[list[dict], dict]:
    """Execute one validated request; returns (event records, result record)."""
    deadline = time.monotonic() + request["timeout_secs"]

    def result(status: str, **extra) -> dict:
        record = {"v": PROTOCOL_VERSION, "kind": "result", "status": status}
        record.update({k: v for k, v in extra.items() if v not in (None, "", False)})
        return record

    try:
        code = compile(request["source"], CANDIDATE_FILE, "exec")
    except SyntaxError as exc:
        return [], result(STATUS_SYNTAX_ERROR, error=f"SyntaxError: {exc}")
    try:
        args = [ast.literal_eval(a) for a in request["call_args"]]
        expected = ast.literal_eval(request["expected"])
    except (ValueError, SyntaxError) as exc:
        return [], result(STATUS_EXCEPTION, error=f"bad test literal: {exc}")

    namespace: dict = {"__name__": "__candidate_module__"}
    sink = io.StringIO()
    try:
        with redirect_stdout(sink):
            exec(code, namespace)
    except BaseException as exc:
        return [], result(STATUS_EXCEPTION, error=f"{type(exc).__name__}: {exc}")
    target = namespace.get(request["entry_point"])
    if not callable(target):
        return [], result(
            STATUS_EXCEPTION,
            error=f"NameError: entry point {request['entry_point']!r} is not defined",
        )

    recorder = (
        Recorder(request["max_events"], request["max_value_chars"], deadline)
        if request["trace"]
        else None
    )

    def watchdog(frame, event, arg):
        if time.monotonic() > deadline:
            raise _Timeout()
        return watchdog if frame.f_code.co_filename == CANDIDATE_FILE else None

    spawned = {"flag": False}

    def thread_sentinel(frame, event, arg):
        spawned["flag"] = True
        return None

    tracer = recorder.callback if recorder else watchdog
    old_thread_trace = threading.gettrace()
    threading.settrace(thread_sentinel)
    old_trace = sys.gettrace()
    try:
        with redirect_stdout(sink):
            sys.settrace(tracer)
            try:
                returned = target(*args)
            finally:
                sys.settrace(old_trace)
    except _Timeout:
        events, _ = recorder.finish() if recorder else ([], False)
        return events, result(
            STATUS_TIMEOUT,
            error=f"timed out after {request['timeout_secs']}s",
            truncated=True,
        )
    except BaseException as exc:
        events, truncated = recorder.finish() if recorder else ([], False)
        return events, result(
            STATUS_EXCEPTION,
            error=f"{type(exc).__name__}: {exc}",
            truncated=truncated,
        )
    finally:
        threading.settrace(old_thread_trace)

    events, truncated = recorder.finish() if recorder else ([], False)
    leaked = [t for t in threading.enumerate() if t is not threading.main_thread()]
    if spawned["flag"] or leaked:
        return events, result(
            STATUS_EXCEPTION,
            error="unsupported: candidate spawned a thread",
            truncated=truncated,
        )
    actual = render_value(returned, request["max_value_chars"])
    try:
        # candidate-defined __eq__ runs here and may itself misbehave
        passed = bool(returned == expected)
    except BaseException as exc:
        return events, result(
            STATUS_EXCEPTION,
            error=f"{type(exc).__name__}: {exc}",
            truncated=truncated,
        )
    status = STATUS_PASSED if passed else STATUS_FAILED_ASSERTION
    return events, result(status, actual=actual, truncated=truncated)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tracerepair-harness",
        description="run one traced candidate execution from a stdin request",
    )
    parser.add_argument(
        "--serve-once",
        action="store_true",
        help="handle exactly one request from stdin and exit (the default)",
    )
    parser.parse_args(argv)
    try:
        document = json.loads(sys.stdin.read())
    except json.JSONDecodeError as exc:
        print(f"request not JSON: {exc.msg}", file=sys.stderr)
        return 2
    try:
        request = _validated(document)
    except RequestError as exc:
        print(f"bad request: {exc}", file=sys.stderr)
        return 2
    events, terminal = run_request(request)
    out = sys.stdout
    for record in events:
        out.write(json.dumps(record) + "\n")
    out.write(json.dumps(terminal) + "\n")
    out.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
