"""Shared domain types for tasks, programs, tests, traces, and verdicts."""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field

# Rendered variable values are cut to this many characters unless a config
# overrides it; unbounded containers would otherwise swamp the prompt budget.
DEFAULT_MAX_VALUE_CHARS = 256


@dataclass(frozen=True)
class TestCase:
    """One test: argument literals, the expected-value literal, and the
    assertion text shown to the model.

    call_args holds one Python literal string per argument; expected holds a
    single literal string. Pass/fail comparison happens in the execution
    harness under native semantics, never by comparing these strings.
    """

    __test__ = False  # keep pytest from collecting this as a test class

    call_args: tuple[str, ...]
    expected: str
    raw_assertion: str


@dataclass(frozen=True)
class Program:
    """A candidate program at some point in the repair loop.

    Syntax failures are recorded as execution statuses downstream, not raised
    here; a Program may hold source that does not parse.
    """

    source: str
    entry_point: str
    origin: str = "seed"  # "seed" or "regenerated"
    iteration: int | None = None

    def __post_init__(self) -> None:
        if not self.source:
            raise ValueError("program source must be nonempty")
        if self.origin not in ("seed", "regenerated"):
            raise ValueError(f"unknown program origin {self.origin!r}")
        if (self.origin == "regenerated") != (self.iteration is not None):
            raise ValueError("iteration is set exactly for regenerated programs")

    @classmethod
    def seed(cls, source: str, entry_point: str) -> Program:
        return cls(source=source, entry_point=entry_point, origin="seed")

    @classmethod
    def regenerated(cls, source: str, entry_point: str, iteration: int) -> Program:
        return cls(
            source=source,
            entry_point=entry_point,
            origin="regenerated",
            iteration=iteration,
        )


@dataclass(frozen=True)
class DebugTask:
    """A debugging problem: description, visible and hidden tests, seed program.

    hidden_tests exist only for final scoring; nothing in the repair loop may
    consult them.
    """

    task_id: str
    description: str
    entry_point: str
    seed_program: str
    visible_tests: tuple[TestCase, ...]
    hidden_tests: tuple[TestCase, ...]

    def seed(self) -> Program:
        return Program.seed(self.seed_program, self.entry_point)


@dataclass(frozen=True)
class VariableSnapshot:
    """Variables in scope at one point of execution, rendered to text.

    bindings preserves the order the harness emitted; truncated names had
    their rendering cut at the size limit.
    """

    bindings: dict[str, str] = field(default_factory=dict)
    truncated: frozenset[str] = frozenset()


@dataclass(frozen=True)
class BlockVerdict:
    """The model's judgment of one presented block."""

    block_label: str
    correct: bool
    explanation: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


_DEF_TEMPLATE = r"^\s*def\s+{name}\s*\("


def _definition_present(source: str, entry_point: str) -> bool:
    pattern = _DEF_TEMPLATE.format(name=re.escape(entry_point))
    return re.search(pattern, source, re.MULTILINE) is not None


def _is_literal(text: str) -> bool:
    try:
        ast.literal_eval(text)
    except (ValueError, SyntaxError, MemoryError, TypeError):
        return False
    return True


def _check_test(test: TestCase, label: str, violations: list[str]) -> None:
    for j, arg in enumerate(test.call_args):
        if not _is_literal(arg):
            violations.append(f"{label} call_args[{j}] not a literal: {arg!r}")
    if not _is_literal(test.expected):
        violations.append(f"{label} expected not a literal: {test.expected!r}")
    if not test.raw_assertion.strip():
        violations.append(f"{label} raw_assertion empty")
        return
    try:
        compile(test.raw_assertion, "<assertion>", "exec")
    except SyntaxError:
        violations.append(f"{label} raw_assertion does not parse")


def validate_task(task: DebugTask) -> ValidationReport:
    """Collect every violated invariant; an empty report means valid.

    Hidden tests get the same structural checks as visible ones: a corpus
    defect should surface at load time, not at final scoring. Their values
    are never evaluated here.
    """
    violations: list[str] = []
    if not task.task_id:
        violations.append("task_id empty")
    if not task.visible_tests:
        violations.append("visible_tests empty")
    if not task.seed_program.strip():
        violations.append("seed_program empty")
    elif not _definition_present(task.seed_program, task.entry_point):
        violations.append("entry_point not defined")
    for i, test in enumerate(task.visible_tests):
        _check_test(test, f"visible_tests[{i}]", violations)
    for i, test in enumerate(task.hidden_tests):
        _check_test(test, f"hidden_tests[{i}]", violations)
    return ValidationReport(tuple(violations))
