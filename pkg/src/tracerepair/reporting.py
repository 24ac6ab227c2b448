"""Report emission for corpus runs: text summary, per-task JSONL, accuracy curve CSV."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .orchestrator import CorpusReport

FORMAT_SUMMARY = "summary_text"
FORMAT_JSONL = "jsonl"
FORMAT_CSV_CURVE = "csv_curve"
FORMATS = (FORMAT_SUMMARY, FORMAT_JSONL, FORMAT_CSV_CURVE)


def summary_text(report: CorpusReport) -> str:
    lines = [
        f"tasks: {len(report.records)}",
        f"pass@1: {report.pass_at_1:.3f}",
        f"mean iterations (debugged tasks): {report.mean_iterations_debugged:.3f}",
        f"mean tokens per task: {report.mean_tokens:.1f}",
    ]
    solved = sum(1 for r in report.records if r.hidden_pass)
    lines.append(f"hidden-pass tasks: {solved}/{len(report.records)}")
    return "\n".join(lines) + "\n"


def tasks_jsonl(report: CorpusReport) -> str:
    out = []
    for record in report.records:
        doc = dataclasses.asdict(record)
        out.append(json.dumps(doc, sort_keys=True))
    return "\n".join(out) + ("\n" if out else "")


def curve_csv(report: CorpusReport) -> str:
    # headerless rows: k,accuracy with k = 0..max_iterations
    rows = [f"{k},{acc:.6f}" for k, acc in enumerate(report.curve)]
    return "\n".join(rows) + "\n"


def emit_report(report: CorpusReport, formats, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for fmt in formats:
        if fmt == FORMAT_SUMMARY:
            path = out_dir / "summary.txt"
            path.write_text(summary_text(report), encoding="utf-8")
        elif fmt == FORMAT_JSONL:
            path = out_dir / "tasks.jsonl"
            path.write_text(tasks_jsonl(report), encoding="utf-8")
        elif fmt == FORMAT_CSV_CURVE:
            path = out_dir / "curve.csv"
            path.write_text(curve_csv(report), encoding="utf-8")
        else:
            raise ValueError(f"unknown report format {fmt!r}")
        written.append(path)
    return written
