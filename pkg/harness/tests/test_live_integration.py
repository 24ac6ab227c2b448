"""Live integration: the real harness subprocess must be interchangeable
with the in-process stand-in used by the engine's own test suite."""

import dataclasses
import json
import sys
from pathlib import Path

from support.inproc import InProcessBridge
from tracerepair.bridge import HarnessBridge, ResourceLimits
from tracerepair.corpus import load_corpus, load_task_file
from tracerepair.engine import DebugConfig
from tracerepair.gateway import ScriptedBackend
from tracerepair.orchestrator import debug_task, evaluate, run_corpus

REPO_ROOT = Path(__file__).resolve().parents[2]
CORPUS = REPO_ROOT / "src" / "tracerepair" / "data" / "corpus"
SCRIPTS = REPO_ROOT / "src" / "tracerepair" / "data" / "scripts"
MODULE = Path(__file__).resolve().parents[1] / "tracerepair_harness.py"

LIMITS = ResourceLimits()


def real_bridge():
    return HarnessBridge(command=[sys.executable, str(MODULE)])


def report(line):
    print(f"[SECONDARY] PASS {line}")


def test_trace_streams_identical_for_fixture_task():
    task = load_task_file(CORPUS / "is_sorted.yaml")
    seed = task.seed()
    test = task.visible_tests[0]
    stubbed = InProcessBridge().execute_with_trace(seed, test, LIMITS, trace=True)
    live = real_bridge().execute_with_trace(seed, test, LIMITS, trace=True)
    assert live.events == stubbed.events
    assert live.status == stubbed.status
    assert live.actual_output == stubbed.actual_output
    assert live.truncated == stubbed.truncated


def masked(outcome):
    doc = dataclasses.asdict(outcome)
    doc["wall_time"] = 0.0
    return doc


def test_case_study_outcome_identical_to_stubbed_run():
    task = load_task_file(CORPUS / "is_sorted.yaml")
    outcomes = []
    evals = []
    for bridge in (InProcessBridge(), real_bridge()):
        backend = ScriptedBackend.from_file(SCRIPTS / "is_sorted_replay.json")
        outcome = debug_task(task, DebugConfig(), backend, bridge, LIMITS)
        evals.append(evaluate(outcome, task, bridge, LIMITS))
        outcomes.append(masked(outcome))
    assert outcomes[0] == outcomes[1]
    assert evals[0] == evals[1]
    assert evals[1].hidden_pass
    report("live harness reproduces the stubbed case-study outcome exactly")


def test_corpus_report_identical_to_stubbed_run():
    corpus = load_corpus(CORPUS)
    reports = []
    for bridge in (InProcessBridge(), real_bridge()):
        backend = ScriptedBackend.from_file(SCRIPTS / "corpus_replay.json")
        run_report = run_corpus(corpus, DebugConfig(), backend, bridge, LIMITS)
        doc = dataclasses.asdict(run_report)
        for record in doc["records"]:
            record["wall_time"] = 0.0
        reports.append(json.dumps(doc, sort_keys=True))
    assert reports[0] == reports[1]
    report("live harness reproduces the full stubbed corpus report")
