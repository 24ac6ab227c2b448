"""Corpus ingestion: one YAML document per task, validated on load.

Schema (version 1):

    version: 1
    task_id: str
    entry_point: str
    description: str
    seed_program: str
    visible_tests:           # or a single `tests:` list, split by option
      - raw_assertion: str
        call_args: [str literal, ...]
        expected: str literal
    hidden_tests: [...]

With visible_split="first" a `tests:` list is split into first-visible /
rest-hidden; files declaring visible_tests/hidden_tests keep their split.
"""

from __future__ import annotations

import logging
from pathlib import Path

import yaml

from .model import DebugTask, TestCase, validate_task

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

SPLIT_DECLARED = "declared"
SPLIT_FIRST = "first"
SPLITS = frozenset({SPLIT_DECLARED, SPLIT_FIRST})


class CorpusFormatError(Exception):
    def __init__(self, path: str | Path, field: str, message: str):
        self.path = str(path)
        self.field = field
        super().__init__(f"{path}: field {field!r}: {message}")


def _require_str(doc: dict, key: str, path) -> str:
    value = doc.get(key)
    if not isinstance(value, str) or not value:
        raise CorpusFormatError(path, key, "missing or not a nonempty string")
    return value


def _parse_test(item, index: int, key: str, path) -> TestCase:
    field = f"{key}[{index}]"
    if not isinstance(item, dict):
        raise CorpusFormatError(path, field, "test entry not a mapping")
    raw = item.get("raw_assertion")
    if not isinstance(raw, str) or not raw:
        raise CorpusFormatError(path, f"{field}.raw_assertion", "missing or empty")
    args = item.get("call_args")
    if not isinstance(args, list) or not all(isinstance(a, str) for a in args):
        raise CorpusFormatError(path, f"{field}.call_args", "must be a list of literal strings")
    expected = item.get("expected")
    if not isinstance(expected, str) or not expected:
        raise CorpusFormatError(path, f"{field}.expected", "missing or empty")
    return TestCase(call_args=tuple(args), expected=expected, raw_assertion=raw)


def _parse_tests(doc: dict, key: str, path) -> tuple[TestCase, ...]:
    items = doc.get(key, [])
    if not isinstance(items, list):
        raise CorpusFormatError(path, key, "must be a list")
    return tuple(_parse_test(item, i, key, path) for i, item in enumerate(items))


def parse_task_document(
    doc, path: str | Path, visible_split: str = SPLIT_DECLARED
) -> DebugTask:
    if visible_split not in SPLITS:
        raise ValueError(f"unknown visible_split {visible_split!r}")
    if not isinstance(doc, dict):
        raise CorpusFormatError(path, "<root>", "document is not a mapping")
    if doc.get("version") != SCHEMA_VERSION:
        raise CorpusFormatError(path, "version", f"expected {SCHEMA_VERSION}")
    task_id = _require_str(doc, "task_id", path)
    entry_point = _require_str(doc, "entry_point", path)
    description = _require_str(doc, "description", path)
    seed_program = _require_str(doc, "seed_program", path)

    if "tests" in doc:
        if visible_split != SPLIT_FIRST:
            raise CorpusFormatError(
                path, "tests", "a bare tests list needs visible_split=first"
            )
        if "visible_tests" in doc or "hidden_tests" in doc:
            raise CorpusFormatError(
                path, "tests", "mixes tests with visible_tests/hidden_tests"
            )
        tests = _parse_tests(doc, "tests", path)
        if not tests:
            raise CorpusFormatError(path, "tests", "empty")
        visible, hidden = tests[:1], tests[1:]
    else:
        visible = _parse_tests(doc, "visible_tests", path)
        hidden = _parse_tests(doc, "hidden_tests", path)

    task = DebugTask(
        task_id=task_id,
        description=description,
        entry_point=entry_point,
        seed_program=seed_program,
        visible_tests=visible,
        hidden_tests=hidden,
    )
    report = validate_task(task)
    if not report.ok:
        raise CorpusFormatError(path, "task", "; ".join(report.violations))
    return task


def load_task_file(path: str | Path, visible_split: str = SPLIT_DECLARED) -> DebugTask:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text("utf-8"))
    except yaml.YAMLError as exc:
        raise CorpusFormatError(path, "<root>", f"YAML parse failure: {exc}") from None
    return parse_task_document(doc, path, visible_split)


def corpus_files(path: str | Path) -> list[Path]:
    """The task files a corpus path names: a directory's .yaml files in sorted
    order, or the single file itself."""
    path = Path(path)
    if path.is_dir():
        files = sorted(
            p for p in path.iterdir() if p.suffix in (".yaml", ".yml") and p.is_file()
        )
        if not files:
            raise CorpusFormatError(path, "<dir>", "no .yaml task files found")
        return files
    if path.is_file():
        return [path]
    raise CorpusFormatError(path, "<path>", "does not exist")


def load_corpus(path: str | Path, visible_split: str = SPLIT_DECLARED) -> list[DebugTask]:
    files = corpus_files(path)
    tasks = [load_task_file(f, visible_split) for f in files]
    seen: set[str] = set()
    for task, f in zip(tasks, files):
        if task.task_id in seen:
            raise CorpusFormatError(f, "task_id", f"duplicate id {task.task_id!r}")
        seen.add(task.task_id)
    return tasks


def task_to_document(task: DebugTask) -> dict:
    def test_doc(t: TestCase) -> dict:
        return {
            "raw_assertion": t.raw_assertion,
            "call_args": list(t.call_args),
            "expected": t.expected,
        }

    return {
        "version": SCHEMA_VERSION,
        "task_id": task.task_id,
        "entry_point": task.entry_point,
        "description": task.description,
        "seed_program": task.seed_program,
        "visible_tests": [test_doc(t) for t in task.visible_tests],
        "hidden_tests": [test_doc(t) for t in task.hidden_tests],
    }


def save_task(task: DebugTask, path: str | Path) -> None:
    text = yaml.safe_dump(
        task_to_document(task), sort_keys=False, width=10**9, allow_unicode=True
    )
    Path(path).write_text(text, encoding="utf-8")
