"""The per-task repair loop, final hidden-test evaluation, and corpus metrics.

Loop shape per iteration: trace the first failing visible test, segment the
trace, batch the block states into one verdict query, ask once more for a
fixed program, and re-run the visible tests. Two backend calls per iteration,
except documented fallbacks: a one-call failure-message iteration when the
current program yields no usable trace or no prompt fits the budget, plus at
most one retry each for unparseable verdicts and unextractable programs.

Hidden tests are read nowhere but evaluate(); debug_task never executes,
renders, or inspects them.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .bridge import (
    STATUS_SYNTAX_ERROR,
    ExecutionResult,
    HarnessProtocolError,
    HarnessSpawnError,
    ResourceLimits,
    TestReport,
)
from .engine import (
    BudgetUnsatisfiable,
    DebugConfig,
    NoProgramInResponse,
    NoVerdictsParsed,
    PromptBundle,
    build_debug_prompt,
    build_failure_prompt,
    build_regeneration_prompt,
    extract_program,
    parse_verdicts,
    select_blocks,
)
from .gateway import AuditLog, BackendScriptExhausted, ModelParams, ModelResponse
from .model import BlockVerdict, DebugTask, Program
from .profiler import compute_intermediate_states, segment_blocks

logger = logging.getLogger(__name__)

TERMINAL_CONTINUED = "continued"
TERMINAL_VISIBLE_PASS = "visible_pass"
TERMINAL_CAP_REACHED = "cap_reached"
TERMINAL_UNRECOVERABLE = "unrecoverable"

DEFAULT_TASK_BUDGET_SECS = 600.0


@dataclass(frozen=True)
class IterationRecord:
    index: int
    program: Program
    failing_test_index: int | None
    block_count: int
    selected_count: int
    verdicts: tuple[BlockVerdict, ...]
    prompt_tokens: int
    response_tokens: int
    terminal_status: str


@dataclass(frozen=True)
class DebugOutcome:
    task_id: str
    final_program: Program
    iterations: tuple[IterationRecord, ...]
    seed_passed_visible: bool
    hidden_pass: bool | None
    total_tokens: int
    wall_time: float

    @property
    def solve_iteration(self) -> int | None:
        """0 when the seed already passed, the 1-based iteration that first
        passed visible tests otherwise, None when none did."""
        if self.seed_passed_visible:
            return 0
        for record in self.iterations:
            if record.terminal_status == TERMINAL_VISIBLE_PASS:
                return record.index + 1
        return None


@dataclass(frozen=True)
class EvalResult:
    hidden_pass: bool
    statuses: tuple[str, ...]
    first_failing: int | None


class _TokenMeter:
    def __init__(self) -> None:
        self.prompt = 0
        self.response = 0

    def add(self, response: ModelResponse) -> None:
        self.prompt += response.prompt_tokens
        self.response += response.response_tokens


def debug_task(
    task: DebugTask,
    config: DebugConfig,
    backend,
    bridge,
    limits: ResourceLimits,
    *,
    params: ModelParams = ModelParams(),
    audit: AuditLog | None = None,
    task_budget_secs: float = DEFAULT_TASK_BUDGET_SECS,
) -> DebugOutcome:
    started = time.monotonic()
    deadline = started + task_budget_secs
    seed = task.seed()

    def outcome(
        final: Program,
        records: list[IterationRecord],
        seed_passed: bool,
        tokens: int,
    ) -> DebugOutcome:
        return DebugOutcome(
            task_id=task.task_id,
            final_program=final,
            iterations=tuple(records),
            seed_passed_visible=seed_passed,
            hidden_pass=None,
            total_tokens=tokens,
            wall_time=time.monotonic() - started,
        )

    try:
        report = bridge.run_visible_tests(seed, list(task.visible_tests), limits)
    except HarnessSpawnError as exc:
        logger.error("task %s: %s", task.task_id, exc)
        return outcome(seed, [], False, 0)
    if report.all_passed:
        return outcome(seed, [], True, 0)

    current = seed
    current_report = report
    records: list[IterationRecord] = []
    history: list[tuple[Program, TestReport]] = [(seed, report)]
    total = _TokenMeter()

    for index in range(config.max_iterations):
        if time.monotonic() > deadline:
            logger.warning("task %s: wall budget exhausted", task.task_id)
            records = _mark_last(records, TERMINAL_UNRECOVERABLE)
            return outcome(_best_program(history), records, False, _tokens(total))
        try:
            record, current, current_report = _run_iteration(
                task, config, backend, bridge, limits, params, audit,
                index, current, current_report, total,
            )
        except BackendScriptExhausted as exc:
            logger.error("task %s iteration %d: %s", task.task_id, index, exc)
            records = _mark_last(records, TERMINAL_UNRECOVERABLE)
            return outcome(_best_program(history), records, False, _tokens(total))
        except _Unrecoverable as exc:
            records.append(exc.record)
            return outcome(_best_program(history), records, False, _tokens(total))
        records.append(record)
        history.append((current, current_report))
        if record.terminal_status == TERMINAL_VISIBLE_PASS:
            return outcome(current, records, False, _tokens(total))
    records = _mark_last(records, TERMINAL_CAP_REACHED)
    return outcome(current, records, False, _tokens(total))


class _Unrecoverable(Exception):
    def __init__(self, record: IterationRecord):
        self.record = record


def _tokens(meter: _TokenMeter) -> int:
    return meter.prompt + meter.response


def _mark_last(records: list[IterationRecord], status: str) -> list[IterationRecord]:
    if not records:
        return records
    return records[:-1] + [dataclasses.replace(records[-1], terminal_status=status)]


def _best_program(history: list[tuple[Program, TestReport]]) -> Program:
    """Fewest failing visible tests wins; ties go to the most recent."""
    best_program, best_failures = history[0][0], history[0][1].failing_count
    for program, report in history[1:]:
        if report.failing_count <= best_failures:
            best_program, best_failures = program, report.failing_count
    return best_program


def _actual_text(result: ExecutionResult) -> str:
    if result.actual_output is not None:
        return result.actual_output
    return result.error_text or "<no output>"


def _run_iteration(
    task: DebugTask,
    config: DebugConfig,
    backend,
    bridge,
    limits: ResourceLimits,
    params: ModelParams,
    audit: AuditLog | None,
    index: int,
    current: Program,
    current_report: TestReport,
    total: _TokenMeter,
) -> tuple[IterationRecord, Program, TestReport]:
    iteration_meter = _TokenMeter()

    def call(bundle: PromptBundle, role: str) -> ModelResponse:
        response = backend.complete(bundle, params, iteration=index, role=role)
        iteration_meter.add(response)
        total.add(response)
        return response

    failing_index = current_report.first_failing
    assert failing_index is not None
    failing_test = task.visible_tests[failing_index]
    try:
        traced = bridge.execute_with_trace(current, failing_test, limits, trace=True)
    except HarnessProtocolError as exc:
        logger.warning("task %s iteration %d: %s", task.task_id, index, exc)
        traced = ExecutionResult(
            status=STATUS_SYNTAX_ERROR,
            actual_output=None,
            error_text=str(exc),
            events=(),
            wall_time=0.0,
        )
    actual = _actual_text(traced)

    block_count = 0
    selected_count = 0
    verdicts: list[BlockVerdict] = []
    bundle: PromptBundle | None = None
    if traced.status != STATUS_SYNTAX_ERROR and traced.events:
        blocks = segment_blocks(traced.events, config.level, current.source)
        block_count = len(blocks)
        states = compute_intermediate_states(blocks, traced.events)
        selected = select_blocks(states, config)
        try:
            bundle = build_debug_prompt(
                task, current, failing_test, actual, selected, config
            )
            selected_count = len(bundle.presented_blocks)
        except BudgetUnsatisfiable as exc:
            logger.warning("task %s iteration %d: %s", task.task_id, index, exc)
            bundle = None

    if bundle is not None:
        verdict_response = call(bundle, "verdict")
        labels = list(bundle.presented_blocks)
        try:
            verdicts = parse_verdicts(verdict_response.text, labels, config.mode)
        except NoVerdictsParsed:
            verdict_response = call(bundle, "verdict-retry")
            try:
                verdicts = parse_verdicts(verdict_response.text, labels, config.mode)
            except NoVerdictsParsed:
                logger.warning(
                    "task %s iteration %d: no verdicts after retry", task.task_id, index
                )
                verdicts = []
        regen_bundle = build_regeneration_prompt(
            bundle, verdict_response.text, verdicts, config
        )
    else:
        # Degraded iteration: no presentable trace, single regeneration query.
        regen_bundle = build_failure_prompt(task, current, failing_test, actual, config)

    regen_response = call(regen_bundle, "regeneration")
    try:
        new_source = extract_program(regen_response.text, task.entry_point)
    except NoProgramInResponse:
        regen_response = call(regen_bundle, "regeneration-retry")
        try:
            new_source = extract_program(regen_response.text, task.entry_point)
        except NoProgramInResponse as exc:
            logger.warning("task %s iteration %d: %s", task.task_id, index, exc)
            raise _Unrecoverable(
                IterationRecord(
                    index=index,
                    program=current,
                    failing_test_index=failing_index,
                    block_count=block_count,
                    selected_count=selected_count,
                    verdicts=tuple(verdicts),
                    prompt_tokens=iteration_meter.prompt,
                    response_tokens=iteration_meter.response,
                    terminal_status=TERMINAL_UNRECOVERABLE,
                )
            ) from exc

    new_program = Program.regenerated(new_source, task.entry_point, index)
    new_report = bridge.run_visible_tests(new_program, list(task.visible_tests), limits)
    record = IterationRecord(
        index=index,
        program=new_program,
        failing_test_index=failing_index,
        block_count=block_count,
        selected_count=selected_count,
        verdicts=tuple(verdicts),
        prompt_tokens=iteration_meter.prompt,
        response_tokens=iteration_meter.response,
        terminal_status=(
            TERMINAL_VISIBLE_PASS if new_report.all_passed else TERMINAL_CONTINUED
        ),
    )
    return record, new_program, new_report


def evaluate(
    outcome: DebugOutcome, task: DebugTask, bridge, limits: ResourceLimits
) -> EvalResult:
    """Run the hidden tests, untraced, against the final program. This is the
    only reader of task.hidden_tests in the pipeline."""
    if not task.hidden_tests:
        logger.warning("task %s has no hidden tests; vacuously passing", task.task_id)
        return EvalResult(hidden_pass=True, statuses=(), first_failing=None)
    report = bridge.run_visible_tests(
        outcome.final_program, list(task.hidden_tests), limits
    )
    return EvalResult(
        hidden_pass=report.all_passed,
        statuses=tuple(r.status for r in report.results),
        first_failing=report.first_failing,
    )


@dataclass(frozen=True)
class TaskRunRecord:
    task_id: str
    hidden_pass: bool
    seed_passed_visible: bool
    iterations_used: int
    solve_iteration: int | None
    terminal_status: str
    total_tokens: int
    wall_time: float


@dataclass(frozen=True)
class CorpusReport:
    records: tuple[TaskRunRecord, ...]
    max_iterations: int
    pass_at_1: float
    curve: tuple[float, ...]
    mean_tokens: float
    mean_iterations_debugged: float


def _terminal_of(outcome: DebugOutcome) -> str:
    if outcome.seed_passed_visible:
        return TERMINAL_VISIBLE_PASS
    if not outcome.iterations:
        return TERMINAL_UNRECOVERABLE
    return outcome.iterations[-1].terminal_status


def run_corpus(
    corpus: list[DebugTask],
    config: DebugConfig,
    backend,
    bridge,
    limits: ResourceLimits,
    *,
    params: ModelParams = ModelParams(),
    audit: AuditLog | None = None,
    workers: int = 1,
    task_budget_secs: float = DEFAULT_TASK_BUDGET_SECS,
) -> CorpusReport:
    def run_one(task: DebugTask) -> TaskRunRecord:
        outcome = debug_task(
            task, config, backend, bridge, limits,
            params=params, audit=audit, task_budget_secs=task_budget_secs,
        )
        result = evaluate(outcome, task, bridge, limits)
        outcome = dataclasses.replace(outcome, hidden_pass=result.hidden_pass)
        return TaskRunRecord(
            task_id=task.task_id,
            hidden_pass=result.hidden_pass,
            seed_passed_visible=outcome.seed_passed_visible,
            iterations_used=len(outcome.iterations),
            solve_iteration=outcome.solve_iteration,
            terminal_status=_terminal_of(outcome),
            total_tokens=outcome.total_tokens,
            wall_time=outcome.wall_time,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_one, corpus))
    else:
        records = [run_one(task) for task in corpus]
    return _aggregate(records, config.max_iterations)


def _aggregate(records: list[TaskRunRecord], max_iterations: int) -> CorpusReport:
    count = len(records)
    passed = sum(1 for r in records if r.hidden_pass)
    curve = []
    for k in range(max_iterations + 1):
        solved = 0
        for r in records:
            qualifying = (
                r.solve_iteration if r.solve_iteration is not None else r.iterations_used
            )
            if r.hidden_pass and qualifying <= k:
                solved += 1
        curve.append(solved / count if count else 0.0)
    debugged = [r for r in records if r.iterations_used > 0]
    return CorpusReport(
        records=tuple(records),
        max_iterations=max_iterations,
        pass_at_1=passed / count if count else 0.0,
        curve=tuple(curve),
        mean_tokens=(
            sum(r.total_tokens for r in records) / count if count else 0.0
        ),
        mean_iterations_debugged=(
            sum(r.iterations_used for r in debugged) / len(debugged)
            if debugged
            else 0.0
        ),
    )
