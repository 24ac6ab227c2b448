import json
import math
import random
from pathlib import Path

import pytest

from support.inproc import InProcessBridge
from support.progs import generate_long_program
from tracerepair.bridge import ResourceLimits
from tracerepair.corpus import load_task_file
from tracerepair.engine import (
    BudgetUnsatisfiable,
    DebugConfig,
    MISSING_EXPLANATION,
    NoProgramInResponse,
    NoVerdictsParsed,
    build_debug_prompt,
    build_failure_prompt,
    build_regeneration_prompt,
    extract_program,
    parse_verdicts,
    select_blocks,
)
from tracerepair.gateway import estimate_tokens
from tracerepair.model import DebugTask, Program, TestCase
from tracerepair.profiler import compute_intermediate_states, segment_blocks

HERE = Path(__file__).parent
CORPUS = HERE.parent / "src" / "tracerepair" / "data" / "corpus"
SCRIPTS = HERE.parent / "src" / "tracerepair" / "data" / "scripts"

BRIDGE = InProcessBridge()
LIMITS = ResourceLimits()


def fixture_states(level="block"):
    task = load_task_file(CORPUS / "is_sorted.yaml")
    seed = task.seed()
    test = task.visible_tests[0]
    result = BRIDGE.execute_with_trace(seed, test, LIMITS, trace=True)
    blocks = segment_blocks(result.events, level, seed.source)
    states = compute_intermediate_states(blocks, result.events)
    return task, seed, test, result, states


def long_trace_states(spans, level="block"):
    source, entry, args = generate_long_program(random.Random(0), spans)
    program = Program.seed(source, entry)
    test = TestCase(call_args=args, expected="-1", raw_assertion="assert compute(...) == -1")
    result = BRIDGE.execute_with_trace(program, test, LIMITS, trace=True)
    blocks = segment_blocks(result.events, level, source)
    states = compute_intermediate_states(blocks, result.events)
    task = DebugTask(
        task_id="long",
        description="accumulate loop values\n",
        entry_point=entry,
        seed_program=source,
        visible_tests=(test,),
        hidden_tests=(),
    )
    return task, program, test, result, states


# --- selection ---------------------------------------------------------------


def test_select_keeps_all_when_under_cap():
    _, _, _, _, states = fixture_states()
    config = DebugConfig()
    assert len(states) == 6
    assert select_blocks(states, config) == states


def test_select_head_and_tail_at_block_level():
    _, _, _, _, states = long_trace_states(40)
    assert len(states) == 41
    config = DebugConfig(max_blocks=10)
    chosen = select_blocks(states, config)
    indexes = [states.index(s) for s in chosen]
    assert indexes == [0, 1, 2, 3, 4, 36, 37, 38, 39, 40]


def test_select_exact_cap_is_identity():
    _, _, _, _, states = long_trace_states(9)
    assert len(states) == 10
    chosen = select_blocks(states, DebugConfig(max_blocks=10))
    assert chosen == states


def test_select_line_level_uses_wider_cap():
    _, _, _, _, states = long_trace_states(30, level="line")
    assert len(states) > 50
    config = DebugConfig(level="line")
    chosen = select_blocks(states, config)
    assert len(chosen) == 50
    indexes = [states.index(s) for s in chosen]
    n = len(states)
    assert indexes == list(range(25)) + list(range(n - 25, n))


def test_select_odd_cap_rejected():
    with pytest.raises(ValueError):
        DebugConfig(max_blocks=7)


# --- prompt assembly ---------------------------------------------------------


def test_chat_prompt_matches_golden():
    task, seed, test, result, states = fixture_states()
    config = DebugConfig()
    bundle = build_debug_prompt(
        task, seed, test, result.actual_output, select_blocks(states, config), config
    )
    want = json.loads((HERE / "goldens" / "chat_messages.json").read_text("utf-8"))
    got = [{"role": m.role, "content": m.content} for m in bundle.messages]
    assert got == want
    assert bundle.presented_blocks == tuple(f"BLOCK-{i}" for i in range(6))
    assert bundle.token_estimate == estimate_tokens(bundle.flat_text())


def test_regeneration_prompt_matches_golden():
    task, seed, test, result, states = fixture_states()
    config = DebugConfig()
    bundle = build_debug_prompt(
        task, seed, test, result.actual_output, select_blocks(states, config), config
    )
    entries = json.loads((SCRIPTS / "is_sorted_replay.json").read_text("utf-8"))
    verdict_reply = entries[0]["reply"]
    verdicts = parse_verdicts(verdict_reply, list(bundle.presented_blocks), "chat")
    regen = build_regeneration_prompt(bundle, verdict_reply, verdicts, config)
    want = json.loads((HERE / "goldens" / "chat_regen_messages.json").read_text("utf-8"))
    got = [{"role": m.role, "content": m.content} for m in regen.messages]
    assert got == want


def test_completion_prompt_carries_worked_example_and_trace():
    task, seed, test, result, states = fixture_states()
    config = DebugConfig(mode="completion")
    bundle = build_debug_prompt(
        task, seed, test, result.actual_output, select_blocks(states, config), config
    )
    text = bundle.flat_text()
    example = (HERE / "goldens" / "completion_worked_example.txt").read_text("utf-8")
    assert text.startswith(example)
    assert "### Task Start ###" in text
    assert text.count("[BLOCK-5]") == 1
    assert text.rstrip("\n").endswith("[debug]")
    assert (
        "With the above function, the assertion is "
        "`assert is_sorted([1, 2, 2, 3, 3, 4]) == True` "
        "but the real execution output is `False`." in text
    )


def test_budget_trimming_drops_middle_blocks_first():
    task, program, test, result, states = long_trace_states(60)
    config = DebugConfig(max_blocks=10, token_budget=600)
    selected = select_blocks(states, config)
    bundle = build_debug_prompt(task, program, test, result.actual_output, selected, config)
    assert bundle.token_estimate <= 600
    kept = bundle.presented_blocks
    original = tuple(s.block.label for s in selected)
    assert 2 <= len(kept) < len(original)
    assert kept[0] == original[0]
    assert kept[-1] == original[-1]
    # kept labels are a subsequence of the original selection
    it = iter(original)
    assert all(label in it for label in kept)


def test_budget_unsatisfiable_when_two_blocks_still_exceed():
    task, program, test, result, states = long_trace_states(20)
    config = DebugConfig(max_blocks=10, token_budget=5)
    selected = select_blocks(states, config)
    with pytest.raises(BudgetUnsatisfiable):
        build_debug_prompt(task, program, test, result.actual_output, selected, config)


def test_custom_estimator_is_respected():
    task, seed, test, result, states = fixture_states()
    config = DebugConfig(token_budget=10**9)
    bundle = build_debug_prompt(
        task, seed, test, result.actual_output, states, config,
        estimator=lambda text: len(text),
    )
    assert bundle.token_estimate == len(bundle.flat_text())


def test_failure_prompt_has_failure_line_and_fix_request():
    task, seed, test, result, _ = fixture_states()
    config = DebugConfig()
    bundle = build_failure_prompt(task, seed, test, result.actual_output, config)
    text = bundle.flat_text()
    assert "# Real Execution Output: False. " in text
    assert "Please fix the Python code." in text
    assert "[BLOCK-0]" not in text


def test_default_config_values():
    config = DebugConfig()
    assert (config.max_blocks, config.token_budget, config.level) == (10, 3097, "block")
    assert (config.line_level_max, config.mode, config.max_iterations) == (50, "chat", 10)


def test_config_validation():
    with pytest.raises(ValueError):
        DebugConfig(token_budget=0)
    with pytest.raises(ValueError):
        DebugConfig(level="paragraph")
    with pytest.raises(ValueError):
        DebugConfig(mode="socratic")
    with pytest.raises(ValueError):
        DebugConfig(max_iterations=-1)
    with pytest.raises(ValueError):
        DebugConfig(line_level_max=49)


# --- verdict parsing ---------------------------------------------------------

LABELS = [f"BLOCK-{i}" for i in range(6)]


def test_parse_figure_verdict_reply():
    entries = json.loads((SCRIPTS / "is_sorted_replay.json").read_text("utf-8"))
    verdicts = parse_verdicts(entries[0]["reply"], LABELS, "chat")
    assert [v.correct for v in verdicts] == [True] * 5 + [False]
    assert verdicts[-1].block_label == "BLOCK-5"
    assert "lst.count(x) > 2" in verdicts[-1].explanation


def test_parse_accepts_string_booleans_and_skips_noise():
    reply = "\n".join(
        [
            "Sure, here is my analysis:",
            '{"block": "BLOCK-0", "correct": "True", "explanation": "fine"}',
            "not json at all",
            '{"block": "BLOCK-1", "correct": "false"}',
            '{"no_block_key": 1}',
        ]
    )
    verdicts = parse_verdicts(reply, LABELS, "chat")
    assert [(v.block_label, v.correct) for v in verdicts] == [
        ("BLOCK-0", True),
        ("BLOCK-1", False),
    ]
    assert verdicts[1].explanation == MISSING_EXPLANATION


def test_parse_orders_by_expected_and_keeps_first_duplicate():
    reply = "\n".join(
        [
            '{"block": "BLOCK-3", "correct": false, "explanation": "first"}',
            '{"block": "BLOCK-1", "correct": true, "explanation": "ok"}',
            '{"block": "BLOCK-3", "correct": true, "explanation": "second"}',
        ]
    )
    verdicts = parse_verdicts(reply, LABELS, "chat")
    assert [v.block_label for v in verdicts] == ["BLOCK-1", "BLOCK-3"]
    assert verdicts[1].explanation == "first"


def test_parse_drops_unknown_labels():
    reply = '{"block": "BLOCK-9", "correct": false, "explanation": "ghost"}\n' \
            '{"block": "BLOCK-2", "correct": true, "explanation": "ok"}'
    verdicts = parse_verdicts(reply, LABELS, "chat")
    assert [v.block_label for v in verdicts] == ["BLOCK-2"]


def test_parse_raises_when_nothing_usable():
    with pytest.raises(NoVerdictsParsed):
        parse_verdicts("I cannot tell.", LABELS, "chat")


def test_parse_completion_sections():
    reply = (
        "[BLOCK-0]\n"
        "Feedback: CORRECT. The loop starts properly.\n"
        "[BLOCK-1]\n"
        "Feedback: INCORRECT. The comparison is reversed.\n"
        "[/debug]\n"
        "[BLOCK-2]\nFeedback: INCORRECT. past the closing tag\n"
    )
    verdicts = parse_verdicts(reply, LABELS, "completion")
    assert [(v.block_label, v.correct) for v in verdicts] == [
        ("BLOCK-0", True),
        ("BLOCK-1", False),
    ]
    assert verdicts[1].explanation == "The comparison is reversed."


def test_parse_completion_without_feedback_raises():
    with pytest.raises(NoVerdictsParsed):
        parse_verdicts("[BLOCK-0]\nlooks nice\n", LABELS, "completion")


# --- program extraction ------------------------------------------------------

FIXED = "def add(a, b):\n    return a + b\n"


def test_extract_from_python_fence():
    reply = f"Here you go:\n```python\n{FIXED}```\nHope that helps."
    assert extract_program(reply, "add") == FIXED


def test_extract_from_bracket_region():
    reply = f"[python]\n{FIXED}[/python]\n"
    assert extract_program(reply, "add") == FIXED


def test_extract_unclosed_bracket_region_runs_to_end():
    reply = f"[python]\n{FIXED}"
    assert extract_program(reply, "add") == FIXED


def test_extract_prefers_region_with_entry_point():
    other = "def helper():\n    return 0\n"
    reply = f"```python\n{other}```\nand then\n```python\n{FIXED}```"
    assert extract_program(reply, "add") == FIXED


def test_extract_bare_source_fallback():
    assert extract_program(FIXED, "add") == FIXED


def test_extract_raises_without_definition():
    with pytest.raises(NoProgramInResponse):
        extract_program("I would simply fix the bug.", "add")
    with pytest.raises(NoProgramInResponse):
        extract_program("```python\ndef helper():\n    return 0\n```", "add")


def test_estimate_tokens_is_quarter_length_rounded_up():
    assert estimate_tokens("") == 0
    assert estimate_tokens("abcd") == 1
    assert estimate_tokens("abcde") == 2
    for n in (1, 3, 17, 4096):
        assert estimate_tokens("x" * n) == math.ceil(n / 4)
