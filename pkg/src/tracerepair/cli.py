"""Command line entry points.

    tracerepair debug    --task t.yaml --backend script --script replies.json
    tracerepair run      --corpus dir/ --out out/
    tracerepair trace    --task t.yaml
    tracerepair validate --corpus dir/

Exit codes: 0 success, 2 configuration error, 3 corpus error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .bridge import HarnessSpawnError
from .config import (
    ConfigError,
    RunConfig,
    as_debug_config,
    as_limits,
    as_model_params,
    build_backend,
    build_bridge,
    load_run_config,
    render_config,
    validate_for_run,
)
from .corpus import CorpusFormatError, corpus_files, load_corpus, load_task_file
from .gateway import AuditLog, AuthError, TransportError
from .orchestrator import debug_task, evaluate, run_corpus
from .profiler import compute_intermediate_states, render_trace_dump, segment_blocks
from .reporting import FORMATS, emit_report, summary_text

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_CORPUS = 3

# argparse dest -> RunConfig field; None values fall through to lower layers
_OVERRIDE_FIELDS = (
    "backend",
    "script",
    "url",
    "model",
    "harness",
    "mode",
    "level",
    "max_iterations",
    "blocks",
    "token_budget",
    "line_level_max",
    "template_version",
    "visible_split",
    "workers",
    "timeout",
    "max_events",
    "max_value_chars",
    "task_budget_secs",
)


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="YAML config file")
    parser.add_argument("--backend", choices=["script", "http"])
    parser.add_argument("--script", metavar="FILE", help="scripted replies (JSON array)")
    parser.add_argument("--url", metavar="URL", help="API base URL for backend=http")
    parser.add_argument("--model", metavar="NAME")
    parser.add_argument("--harness", metavar="CMD", help="tracer harness command")
    parser.add_argument("--mode", choices=["chat", "completion"])
    parser.add_argument("--level", choices=["line", "block", "function"])
    parser.add_argument("--max-iterations", type=int, dest="max_iterations")
    parser.add_argument("--blocks", type=int, help="block-report cap per prompt")
    parser.add_argument("--token-budget", type=int, dest="token_budget")
    parser.add_argument("--line-level-max", type=int, dest="line_level_max")
    parser.add_argument("--template-version", dest="template_version")
    parser.add_argument("--visible-split", choices=["declared", "first"],
                        dest="visible_split")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--timeout", type=float, help="per-test wall seconds")
    parser.add_argument("--max-events", type=int, dest="max_events")
    parser.add_argument("--max-value-chars", type=int, dest="max_value_chars")
    parser.add_argument("--task-budget", type=float, dest="task_budget_secs",
                        help="wall seconds per task")
    parser.add_argument("--print-config", action="store_true",
                        help="print the merged config and exit")
    parser.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tracerepair",
        description="Iterative repair of failing programs from runtime traces",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_debug = sub.add_parser("debug", help="repair one task")
    p_debug.add_argument("--task", required=True, metavar="FILE")
    p_debug.add_argument("--out", metavar="DIR", help="write audit log and outcome here")
    p_debug.add_argument("--dump-trace", action="store_true", dest="dump_trace",
                         help="print the seed's annotated trace before repairing")
    _common_flags(p_debug)
    p_debug.set_defaults(handler=_cmd_debug)

    p_run = sub.add_parser("run", help="repair a corpus and write reports")
    p_run.add_argument("--corpus", metavar="PATH")
    p_run.add_argument("--out", metavar="DIR")
    _common_flags(p_run)
    p_run.set_defaults(handler=_cmd_run)

    p_trace = sub.add_parser("trace", help="print one annotated trace, no backend")
    p_trace.add_argument("--task", required=True, metavar="FILE")
    p_trace.add_argument("--test-index", type=int, dest="test_index",
                         help="visible test to trace (default: first failing)")
    _common_flags(p_trace)
    p_trace.set_defaults(handler=_cmd_trace)

    p_val = sub.add_parser("validate", help="check corpus files, report per file")
    p_val.add_argument("--corpus", required=True, metavar="PATH")
    _common_flags(p_val)
    p_val.set_defaults(handler=_cmd_validate)
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {name: getattr(args, name) for name in _OVERRIDE_FIELDS}
    if getattr(args, "corpus", None):
        overrides["corpus"] = args.corpus
    if getattr(args, "out", None):
        overrides["out"] = args.out
    return load_run_config(overrides, args.config)


def _maybe_print_config(args: argparse.Namespace, config: RunConfig) -> bool:
    if args.print_config:
        sys.stdout.write(render_config(config))
        return True
    return False


def _cmd_debug(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if _maybe_print_config(args, config):
        return EXIT_OK
    validate_for_run(config)
    task = load_task_file(args.task, config.visible_split)
    out_dir = Path(args.out) if args.out else None
    audit = AuditLog(out_dir / "audit.jsonl") if out_dir else None
    backend = build_backend(config, audit)
    bridge = build_bridge(config)
    limits = as_limits(config)
    if args.dump_trace:
        _print_trace(task, bridge, limits, config, test_index=None)
    outcome = debug_task(
        task,
        as_debug_config(config),
        backend,
        bridge,
        limits,
        params=as_model_params(config),
        audit=audit,
        task_budget_secs=config.task_budget_secs,
    )
    result = evaluate(outcome, task, bridge, limits)
    outcome = dataclasses.replace(outcome, hidden_pass=result.hidden_pass)
    visible = "pass" if (
        outcome.seed_passed_visible or outcome.solve_iteration is not None
    ) else "fail"
    hidden = "pass" if result.hidden_pass else "fail"
    print(
        f"task {task.task_id}: iterations={len(outcome.iterations)} "
        f"visible={visible} hidden={hidden} tokens={outcome.total_tokens}"
    )
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "final_program.py").write_text(
            outcome.final_program.source, encoding="utf-8"
        )
        (out_dir / "outcome.json").write_text(
            json.dumps(dataclasses.asdict(outcome), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if _maybe_print_config(args, config):
        return EXIT_OK
    validate_for_run(config)
    if not config.corpus:
        raise ConfigError("no corpus given (--corpus or config key)")
    corpus = load_corpus(config.corpus, config.visible_split)
    out_dir = Path(config.out)
    audit = AuditLog(out_dir / "audit.jsonl")
    backend = build_backend(config, audit)
    bridge = build_bridge(config)
    report = run_corpus(
        corpus,
        as_debug_config(config),
        backend,
        bridge,
        as_limits(config),
        params=as_model_params(config),
        audit=audit,
        workers=config.workers,
        task_budget_secs=config.task_budget_secs,
    )
    emit_report(report, FORMATS, out_dir)
    sys.stdout.write(summary_text(report))
    return EXIT_OK


def _print_trace(task, bridge, limits, config: RunConfig, test_index: int | None) -> None:
    seed = task.seed()
    tests = list(task.visible_tests)
    if test_index is None:
        untraced = bridge.run_visible_tests(seed, tests, limits)
        test_index = untraced.first_failing if untraced.first_failing is not None else 0
    if not 0 <= test_index < len(tests):
        raise ConfigError(
            f"test index {test_index} out of range; task has {len(tests)} visible tests"
        )
    test = tests[test_index]
    result = bridge.execute_with_trace(seed, test, limits, trace=True)
    actual = result.actual_output if result.actual_output is not None else result.error_text
    print(f"task {task.task_id} visible[{test_index}]: status={result.status} actual={actual}")
    if not result.events:
        print("(no trace events)")
        return
    blocks = segment_blocks(result.events, config.level, seed.source)
    states = compute_intermediate_states(blocks, result.events)
    print(render_trace_dump(states))


def _cmd_trace(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if _maybe_print_config(args, config):
        return EXIT_OK
    task = load_task_file(args.task, config.visible_split)
    bridge = build_bridge(config)
    _print_trace(task, bridge, as_limits(config), config, args.test_index)
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if _maybe_print_config(args, config):
        return EXIT_OK
    failures = 0
    for path in corpus_files(args.corpus):
        try:
            task = load_task_file(path, config.visible_split)
        except CorpusFormatError as exc:
            failures += 1
            print(f"FAIL {exc}")
        else:
            print(
                f"OK   {path}: {task.task_id} "
                f"({len(task.visible_tests)} visible, {len(task.hidden_tests)} hidden)"
            )
    if failures:
        print(f"{failures} invalid task file(s)")
        return EXIT_CORPUS
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorpusFormatError as exc:
        print(f"corpus error: {exc}", file=sys.stderr)
        return EXIT_CORPUS
    except (AuthError, TransportError, HarnessSpawnError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
