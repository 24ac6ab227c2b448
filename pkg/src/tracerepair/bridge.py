"""Subprocess bridge to the tracing harness.

Launches the harness, speaks the line-oriented JSON protocol over its stdout,
and turns raw streams into typed traces and test reports. Wire format, one
record per line:

    {"v": 1, "kind": "event", "seq": int, "line": int,
     "event": "line|call|return|exception", "func": str,
     "locals": {name: rendered}}
    {"v": 1, "kind": "result", "status": str, "actual": str?, "error": str?,
     "truncated": bool?}

The result record is always last. stderr is reserved for harness diagnostics.
"""

from __future__ import annotations

import json
import logging
import os
import shlex
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from typing import Iterable

from .model import Program, TestCase, VariableSnapshot

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1

STATUS_PASSED = "passed"
STATUS_FAILED_ASSERTION = "failed_assertion"
STATUS_EXCEPTION = "exception"
STATUS_TIMEOUT = "timeout"
STATUS_SYNTAX_ERROR = "syntax_error"
VALID_STATUSES = frozenset(
    {
        STATUS_PASSED,
        STATUS_FAILED_ASSERTION,
        STATUS_EXCEPTION,
        STATUS_TIMEOUT,
        STATUS_SYNTAX_ERROR,
    }
)

EVENT_KINDS = frozenset({"line", "call", "return", "exception"})

# Rendered values cut at the size limit end with this marker; the harness and
# the bridge agree on it so truncation survives the text-only wire format.
TRUNCATION_MARKER = "...<truncated>"

# Name bound to a frame's return value in the snapshot of a return event.
RETURN_BINDING = "_ret"

# Extra wall-clock seconds the bridge waits beyond the harness's own timeout
# before killing the subprocess. The harness aborts itself first in the
# normal case; the kill is a fallback for a wedged process.
KILL_GRACE_SECS = 5.0

HARNESS_ENV_VAR = "TRACEREPAIR_HARNESS"
HARNESS_MODULE = "tracerepair_harness"


class HarnessProtocolError(Exception):
    """The harness emitted a line that does not parse under the v1 schema."""

    def __init__(self, line_no: int, line: str, reason: str):
        self.line_no = line_no
        self.line = line
        self.reason = reason
        super().__init__(f"protocol violation at line {line_no}: {reason}: {line!r}")


class HarnessSpawnError(Exception):
    """The harness executable could not be located or started."""


@dataclass(frozen=True)
class ResourceLimits:
    timeout_secs: float = 10.0
    max_events: int = 50_000
    max_value_chars: int = 256

    def __post_init__(self) -> None:
        if self.timeout_secs <= 0:
            raise ValueError("timeout_secs must be positive")
        if self.max_events <= 0:
            raise ValueError("max_events must be positive")
        if self.max_value_chars <= 0:
            raise ValueError("max_value_chars must be positive")


@dataclass(frozen=True)
class TraceEvent:
    """One observation from the trace hook.

    snapshot holds the variables in scope *after* this event ran; return
    events bind the frame's return value under "_ret".
    """

    seq: int
    line_no: int
    event_kind: str
    function: str
    snapshot: VariableSnapshot


@dataclass(frozen=True)
class ExecutionResult:
    status: str
    actual_output: str | None
    error_text: str
    events: tuple[TraceEvent, ...]
    wall_time: float
    truncated: bool = False

    @property
    def passed(self) -> bool:
        return self.status == STATUS_PASSED


@dataclass(frozen=True)
class TestReport:
    results: tuple[ExecutionResult, ...]
    first_failing: int | None

    @property
    def all_passed(self) -> bool:
        return self.first_failing is None

    @property
    def failing_count(self) -> int:
        return sum(1 for r in self.results if not r.passed)


@dataclass(frozen=True)
class ParsedStream:
    events: tuple[TraceEvent, ...]
    result: dict | None


def _snapshot_from_locals(raw: dict) -> VariableSnapshot:
    bindings: dict[str, str] = {}
    truncated: set[str] = set()
    for name, value in raw.items():
        if not isinstance(name, str) or not isinstance(value, str):
            raise TypeError("locals must map str to str")
        bindings[name] = value
        if value.endswith(TRUNCATION_MARKER):
            truncated.add(name)
    return VariableSnapshot(bindings=bindings, truncated=frozenset(truncated))


def parse_trace_events(
    stream: Iterable[bytes | str], *, tolerate_trailing_garbage: bool = False
) -> ParsedStream:
    """Parse harness stdout lines into events plus the terminal result record.

    tolerate_trailing_garbage drops a malformed final fragment, for streams
    cut short by a kill; anything malformed elsewhere raises.
    """
    events: list[TraceEvent] = []
    result: dict | None = None
    last_seq = -1
    pending_error: HarnessProtocolError | None = None
    line_no = 0
    for raw in stream:
        line_no += 1
        if pending_error is not None:
            # The malformed line was not final after all.
            raise pending_error
        text = raw.decode("utf-8", errors="replace") if isinstance(raw, bytes) else raw
        text = text.rstrip("\r\n")
        if not text:
            continue
        try:
            record = _parse_record(text, line_no)
        except HarnessProtocolError as exc:
            if tolerate_trailing_garbage:
                pending_error = exc
                continue
            raise
        if record["kind"] == "result":
            if result is not None:
                raise HarnessProtocolError(line_no, text, "second result record")
            result = record
            continue
        if result is not None:
            raise HarnessProtocolError(line_no, text, "event after result record")
        seq = record["seq"]
        if seq <= last_seq:
            raise HarnessProtocolError(line_no, text, "seq not increasing")
        last_seq = seq
        events.append(
            TraceEvent(
                seq=seq,
                line_no=record["line"],
                event_kind=record["event"],
                function=record["func"],
                snapshot=_snapshot_from_locals(record["locals"]),
            )
        )
    if pending_error is not None:
        logger.debug("dropped truncated trailing line: %s", pending_error)
    return ParsedStream(events=tuple(events), result=result)


def _parse_record(text: str, line_no: int) -> dict:
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise HarnessProtocolError(line_no, text, f"not JSON ({exc.msg})") from None
    if not isinstance(record, dict):
        raise HarnessProtocolError(line_no, text, "record not an object")
    if record.get("v") != PROTOCOL_VERSION:
        raise HarnessProtocolError(line_no, text, "missing or wrong version")
    kind = record.get("kind")
    if kind == "result":
        status = record.get("status")
        if status not in VALID_STATUSES:
            raise HarnessProtocolError(line_no, text, f"unknown status {status!r}")
        return record
    if kind == "event":
        if not isinstance(record.get("seq"), int):
            raise HarnessProtocolError(line_no, text, "seq not an int")
        line = record.get("line")
        if not isinstance(line, int) or line < 1:
            raise HarnessProtocolError(line_no, text, "line not a positive int")
        if record.get("event") not in EVENT_KINDS:
            raise HarnessProtocolError(line_no, text, "unknown event kind")
        if not isinstance(record.get("func"), str):
            raise HarnessProtocolError(line_no, text, "func not a string")
        locals_map = record.get("locals")
        if not isinstance(locals_map, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in locals_map.items()
        ):
            raise HarnessProtocolError(line_no, text, "locals not a str map")
        return record
    raise HarnessProtocolError(line_no, text, f"unknown kind {kind!r}")


def _locate_harness() -> list[str]:
    env_value = os.environ.get(HARNESS_ENV_VAR)
    if env_value:
        return shlex.split(env_value)
    import importlib.util

    if importlib.util.find_spec(HARNESS_MODULE) is not None:
        return [sys.executable, "-m", HARNESS_MODULE]
    raise HarnessSpawnError(
        f"no tracing harness found: set {HARNESS_ENV_VAR} or install {HARNESS_MODULE}"
    )


@dataclass
class HarnessBridge:
    """Runs programs through the tracing harness, one subprocess per execution.

    command is the harness invocation without the --serve-once argument; when
    omitted it is resolved from the environment at first use.
    """

    command: list[str] | None = None
    _resolved: list[str] | None = field(default=None, repr=False)

    def _command(self) -> list[str]:
        if self._resolved is None:
            base = self.command if self.command else _locate_harness()
            self._resolved = [*base, "--serve-once"]
        return self._resolved

    def execute_with_trace(
        self,
        program: Program,
        test: TestCase,
        limits: ResourceLimits,
        *,
        trace: bool = True,
    ) -> ExecutionResult:
        request = {
            "v": PROTOCOL_VERSION,
            "source": program.source,
            "entry_point": program.entry_point,
            "call_args": list(test.call_args),
            "expected": test.expected,
            "trace": trace,
            "timeout_secs": limits.timeout_secs,
            "max_events": limits.max_events,
            "max_value_chars": limits.max_value_chars,
        }
        started = time.monotonic()
        stdout, stderr, killed = self._run_subprocess(
            json.dumps(request), limits.timeout_secs + KILL_GRACE_SECS
        )
        wall_time = time.monotonic() - started
        parsed = parse_trace_events(
            stdout.splitlines(), tolerate_trailing_garbage=killed
        )
        if parsed.result is None:
            status = STATUS_TIMEOUT if killed else STATUS_EXCEPTION
            tail = stderr.decode("utf-8", errors="replace")[-500:]
            return ExecutionResult(
                status=status,
                actual_output=None,
                error_text=f"harness produced no result record; stderr: {tail}",
                events=parsed.events,
                wall_time=wall_time,
                truncated=True,
            )
        record = parsed.result
        return ExecutionResult(
            status=record["status"],
            actual_output=record.get("actual"),
            error_text=record.get("error", ""),
            events=parsed.events,
            wall_time=wall_time,
            truncated=bool(record.get("truncated", False)),
        )

    def run_visible_tests(
        self, program: Program, tests: list[TestCase], limits: ResourceLimits
    ) -> TestReport:
        if not tests:
            raise ValueError("tests must be nonempty")
        results: list[ExecutionResult] = []
        first_failing: int | None = None
        for index, test in enumerate(tests):
            try:
                result = self.execute_with_trace(program, test, limits, trace=False)
            except HarnessProtocolError as exc:
                logger.warning("test %d: %s", index, exc)
                result = ExecutionResult(
                    status=STATUS_EXCEPTION,
                    actual_output=None,
                    error_text=str(exc),
                    events=(),
                    wall_time=0.0,
                )
            results.append(result)
            if first_failing is None and not result.passed:
                first_failing = index
        return TestReport(results=tuple(results), first_failing=first_failing)

    def _run_subprocess(
        self, request_text: str, deadline: float
    ) -> tuple[bytes, bytes, bool]:
        with tempfile.TemporaryDirectory(prefix="tracerepair-run-") as workdir:
            env = {
                "PATH": os.environ.get("PATH", ""),
                "PYTHONHASHSEED": "0",
                "PYTHONIOENCODING": "utf-8",
            }
            try:
                proc = subprocess.Popen(
                    self._command(),
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    stderr=subprocess.PIPE,
                    cwd=workdir,
                    env=env,
                )
            except FileNotFoundError as exc:
                raise HarnessSpawnError(
                    f"cannot start harness {self._command()!r}: {exc}"
                ) from exc
            try:
                stdout, stderr = proc.communicate(
                    request_text.encode("utf-8"), timeout=deadline
                )
                return stdout, stderr, False
            except subprocess.TimeoutExpired:
                proc.kill()
                stdout, stderr = proc.communicate()
                return stdout, stderr, True
