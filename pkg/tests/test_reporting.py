import json

import pytest

from tracerepair.orchestrator import CorpusReport, TaskRunRecord
from tracerepair.reporting import (
    FORMAT_CSV_CURVE,
    FORMAT_JSONL,
    FORMAT_SUMMARY,
    FORMATS,
    curve_csv,
    emit_report,
    summary_text,
    tasks_jsonl,
)


def sample_report():
    records = (
        TaskRunRecord(
            task_id="add", hidden_pass=True, seed_passed_visible=True,
            iterations_used=0, solve_iteration=0, terminal_status="visible_pass",
            total_tokens=0, wall_time=0.01,
        ),
        TaskRunRecord(
            task_id="is_sorted", hidden_pass=True, seed_passed_visible=False,
            iterations_used=1, solve_iteration=1, terminal_status="visible_pass",
            total_tokens=1200, wall_time=0.4,
        ),
        TaskRunRecord(
            task_id="sum_upto", hidden_pass=False, seed_passed_visible=False,
            iterations_used=1, solve_iteration=1, terminal_status="visible_pass",
            total_tokens=600, wall_time=0.2,
        ),
    )
    curve = (1 / 3, 2 / 3, 2 / 3)
    return CorpusReport(
        records=records,
        max_iterations=2,
        pass_at_1=2 / 3,
        curve=curve,
        mean_tokens=600.0,
        mean_iterations_debugged=1.0,
    )


def test_summary_text_lines():
    text = summary_text(sample_report())
    lines = text.splitlines()
    assert "tasks: 3" in lines
    assert "pass@1: 0.667" in lines
    assert "mean iterations (debugged tasks): 1.000" in lines
    assert "mean tokens per task: 600.0" in lines
    assert "hidden-pass tasks: 2/3" in lines
    assert text.endswith("\n")


def test_tasks_jsonl_round_trips():
    text = tasks_jsonl(sample_report())
    lines = text.splitlines()
    assert len(lines) == 3
    parsed = [json.loads(line) for line in lines]
    assert [p["task_id"] for p in parsed] == ["add", "is_sorted", "sum_upto"]
    assert parsed[1]["hidden_pass"] is True
    assert parsed[2]["hidden_pass"] is False
    assert parsed[0]["solve_iteration"] == 0
    # keys are emitted sorted for byte-stable output
    assert lines[0] == json.dumps(parsed[0], sort_keys=True)


def test_curve_csv_headerless_rows():
    text = curve_csv(sample_report())
    rows = text.splitlines()
    assert rows == ["0,0.333333", "1,0.666667", "2,0.666667"]


def test_emit_report_writes_requested_files(tmp_path):
    out = tmp_path / "deep" / "out"
    written = emit_report(sample_report(), FORMATS, out)
    assert [p.name for p in written] == ["summary.txt", "tasks.jsonl", "curve.csv"]
    assert all(p.exists() for p in written)
    assert (out / "summary.txt").read_text() == summary_text(sample_report())
    assert (out / "curve.csv").read_text() == curve_csv(sample_report())


def test_emit_report_single_format(tmp_path):
    written = emit_report(sample_report(), [FORMAT_CSV_CURVE], tmp_path)
    assert [p.name for p in written] == ["curve.csv"]
    assert not (tmp_path / "summary.txt").exists()


def test_emit_report_rejects_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit_report(sample_report(), ["pdf"], tmp_path)


def test_format_constants_cover_all():
    assert FORMATS == (FORMAT_SUMMARY, FORMAT_JSONL, FORMAT_CSV_CURVE)


def test_empty_report_renders():
    empty = CorpusReport(
        records=(), max_iterations=10, pass_at_1=0.0,
        curve=tuple([0.0] * 11), mean_tokens=0.0, mean_iterations_debugged=0.0,
    )
    assert "tasks: 0" in summary_text(empty)
    assert tasks_jsonl(empty) == ""
    assert len(curve_csv(empty).splitlines()) == 11
