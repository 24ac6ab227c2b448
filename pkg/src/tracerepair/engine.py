"""Prompt assembly, head/tail block selection, and verdict parsing.

Templates live in templates/<mode>.<version>.txt. Slots use <<NAME>> markers
(plain text substitution, so literal braces in the scaffold need no escaping);
chat templates additionally carry <<<ROLE>>> lines separating turns. The
scaffold bytes around the slots are what the golden tests pin down.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import re
from dataclasses import dataclass
from importlib import resources

from .gateway import estimate_tokens
from .model import BlockVerdict, DebugTask, Program, TestCase
from .profiler import (
    LEVEL_LINE,
    LEVELS,
    BlockState,
    render_block_section,
)

logger = logging.getLogger(__name__)

MODE_CHAT = "chat"
MODE_COMPLETION = "completion"
MODES = frozenset({MODE_CHAT, MODE_COMPLETION})

FIX_REQUEST = "Please fix the Python code."
DEBUG_OPEN = "[debug]"
DEBUG_CLOSE = "[/debug]"
PYTHON_OPEN = "[python]"
PYTHON_CLOSE = "[/python]"

MISSING_EXPLANATION = "(no explanation given)"


class BudgetUnsatisfiable(Exception):
    """Even a two-block prompt exceeds the token budget."""


class NoVerdictsParsed(Exception):
    """The response contained nothing recognizable as a block verdict."""


class NoProgramInResponse(Exception):
    """No code region defining the entry point was found in the response."""


@dataclass(frozen=True)
class DebugConfig:
    max_blocks: int = 10
    token_budget: int = 3097
    level: str = "block"
    line_level_max: int = 50
    mode: str = MODE_CHAT
    max_iterations: int = 10
    template_version: str = "v1"

    def __post_init__(self) -> None:
        if self.max_blocks < 2 or self.max_blocks % 2 != 0:
            raise ValueError("max_blocks must be an even count >= 2")
        if self.token_budget <= 0:
            raise ValueError("token_budget must be positive")
        if self.line_level_max < 2 or self.line_level_max % 2 != 0:
            raise ValueError("line_level_max must be an even count >= 2")
        if self.level not in LEVELS:
            raise ValueError(f"unknown decomposition level {self.level!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown prompt mode {self.mode!r}")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class PromptBundle:
    """One assembled model query: chat turns or a single completion text."""

    mode: str
    messages: tuple[Message, ...] = ()
    text: str = ""
    token_estimate: int = 0
    presented_blocks: tuple[str, ...] = ()

    def flat_text(self) -> str:
        if self.mode == MODE_COMPLETION:
            return self.text
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class _ChatTemplate:
    turns: tuple[Message, ...]


_template_cache: dict[str, str | _ChatTemplate] = {}


def _load_asset(name: str) -> str:
    return (
        resources.files("tracerepair").joinpath("templates", name).read_text("utf-8")
    )


def _chat_template(version: str) -> _ChatTemplate:
    key = f"chat.{version}"
    cached = _template_cache.get(key)
    if isinstance(cached, _ChatTemplate):
        return cached
    text = _load_asset(f"{key}.txt")
    turns: list[Message] = []
    role: str | None = None
    body: list[str] = []
    for line in text.split("\n"):
        marker = re.fullmatch(r"<<<([A-Z]+)>>>", line)
        if marker:
            if role is not None:
                turns.append(Message(role=role, content="\n".join(body)))
            role = marker.group(1).lower()
            body = []
        else:
            body.append(line)
    if role is not None:
        # Drop the file's trailing newline, not content newlines.
        if body and body[-1] == "":
            body.pop()
        turns.append(Message(role=role, content="\n".join(body)))
    template = _ChatTemplate(turns=tuple(turns))
    _template_cache[key] = template
    return template


def _completion_template(version: str) -> str:
    key = f"completion.{version}"
    cached = _template_cache.get(key)
    if isinstance(cached, str):
        return cached
    text = _load_asset(f"{key}.txt")
    _template_cache[key] = text
    return text


def _fill(template: str, slots: dict[str, str]) -> str:
    out = template
    for name, value in slots.items():
        out = out.replace(f"<<{name}>>", value)
    return out


def select_blocks(states: list[BlockState], config: DebugConfig) -> list[BlockState]:
    """Keep everything up to the threshold, else the head and tail halves.

    The threshold is max_blocks, or line_level_max when the states are
    line-granular. Output order is input order with no duplicates.
    """
    if not states:
        raise ValueError("states must be nonempty")
    threshold = (
        config.line_level_max
        if states[0].block.level == LEVEL_LINE
        else config.max_blocks
    )
    if len(states) <= threshold:
        return list(states)
    head = threshold // 2
    tail = threshold - head
    return list(states[:head]) + list(states[-tail:])


def _current_body(program: Program, description: str) -> str:
    """The program as the model originally answered it: description stripped
    when the source opens with it, otherwise the full source."""
    prefix = description.rstrip("\n")
    if program.source.startswith(prefix):
        rest = program.source[len(prefix) :]
        if rest.strip():
            return rest.strip("\n")
    return program.source.strip("\n")


def _span_sampled(state: BlockState, config: DebugConfig) -> BlockState:
    """Function-level blocks over the line cap keep only head and tail lines."""
    span = state.block.line_span
    if state.block.level != "function" or len(span) <= config.line_level_max:
        return state
    head = config.line_level_max // 2
    tail = config.line_level_max - head
    block = dataclasses.replace(state.block, line_span=span[:head] + span[-tail:])
    return dataclasses.replace(state, block=block)


def _assemble_chat(
    task: DebugTask,
    program: Program,
    failing: TestCase,
    actual: str,
    sections: list[str],
    config: DebugConfig,
) -> tuple[Message, ...]:
    template = _chat_template(config.template_version)
    slots = {
        "DESCRIPTION": task.description.rstrip("\n"),
        "CURRENT_BODY": _current_body(program, task.description),
        "RAW_ASSERTION": failing.raw_assertion,
        "ACTUAL": actual,
        "BLOCK_SECTIONS": "\n".join(sections),
    }
    return tuple(
        Message(role=turn.role, content=_fill(turn.content, slots))
        for turn in template.turns
    )


def _assemble_completion(
    program: Program,
    failing: TestCase,
    actual: str,
    sections: list[str],
    config: DebugConfig,
) -> str:
    template = _completion_template(config.template_version)
    return _fill(
        template,
        {
            "RAW_ASSERTION": failing.raw_assertion,
            "ACTUAL": actual,
            "PROGRAM": program.source.strip("\n"),
            "BLOCK_SECTIONS": "\n".join(sections),
        },
    )


def build_debug_prompt(
    task: DebugTask,
    program: Program,
    failing: TestCase,
    actual: str,
    selected: list[BlockState],
    config: DebugConfig,
    estimator=estimate_tokens,
) -> PromptBundle:
    """Assemble the batched per-block verdict query.

    When the assembled text overruns the budget, presented blocks are dropped
    from the middle of the selection (innermost first, two at a time) until
    it fits; at two blocks the overrun becomes BudgetUnsatisfiable.
    """
    if not selected:
        raise ValueError("selected must be nonempty")
    kept = [_span_sampled(s, config) for s in selected]
    while True:
        sections = [render_block_section(s) for s in kept]
        if config.mode == MODE_CHAT:
            messages = _assemble_chat(task, program, failing, actual, sections, config)
            bundle = PromptBundle(
                mode=MODE_CHAT,
                messages=messages,
                presented_blocks=tuple(s.block.label for s in kept),
            )
        else:
            text = _assemble_completion(program, failing, actual, sections, config)
            bundle = PromptBundle(
                mode=MODE_COMPLETION,
                text=text,
                presented_blocks=tuple(s.block.label for s in kept),
            )
        estimate = estimator(bundle.flat_text())
        if estimate <= config.token_budget:
            return _with_estimate(bundle, estimate)
        if len(kept) <= 2:
            raise BudgetUnsatisfiable(
                f"two-block prompt estimates {estimate} > budget {config.token_budget}"
            )
        kept = _drop_middle(kept)


def _with_estimate(bundle: PromptBundle, estimate: int) -> PromptBundle:
    return dataclasses.replace(bundle, token_estimate=estimate)


def _drop_middle(kept: list[BlockState]) -> list[BlockState]:
    n = len(kept)
    if n == 3:
        return [kept[0], kept[2]]
    mid = n // 2
    return kept[: mid - 1] + kept[mid + 1 :]


def build_failure_prompt(
    task: DebugTask,
    program: Program,
    failing: TestCase,
    actual: str,
    config: DebugConfig,
    estimator=estimate_tokens,
) -> PromptBundle:
    """Degraded single-query prompt when no trace can be presented: the
    failure line plus the fix request, no block sections."""
    failure = (
        "The code above fails the given unit test:\n"
        f"{failing.raw_assertion} # Real Execution Output: {actual}. \n"
        "Help me debug this.\n"
        "\n"
        f"{FIX_REQUEST}"
    )
    if config.mode == MODE_CHAT:
        template = _chat_template(config.template_version)
        slots = {
            "DESCRIPTION": task.description.rstrip("\n"),
            "CURRENT_BODY": _current_body(program, task.description),
        }
        messages = tuple(
            Message(role=turn.role, content=_fill(turn.content, slots))
            for turn in template.turns[:-1]
        ) + (Message(role="user", content=failure),)
        bundle = PromptBundle(mode=MODE_CHAT, messages=messages)
    else:
        source = program.source.strip("\n")
        text = (
            "### Task Start ###\n"
            "# These are the assertions for your function:\n"
            f"{failing.raw_assertion}\n"
            "\n"
            f"{source}\n"
            "\n"
            f"With the above function, the assertion is `{failing.raw_assertion}` "
            f"but the real execution output is `{actual}`.\n"
            "\n"
            f"{FIX_REQUEST}\n"
            f"{PYTHON_OPEN}\n"
        )
        bundle = PromptBundle(mode=MODE_COMPLETION, text=text)
    return _with_estimate(bundle, estimator(bundle.flat_text()))


def build_regeneration_prompt(
    bundle: PromptBundle,
    response_text: str,
    verdicts: list[BlockVerdict],
    config: DebugConfig,
) -> PromptBundle:
    """Extend the verdict-query context with the model's reply and the fix
    request. verdicts ride along for callers that inspect them; the reply is
    replayed verbatim."""
    del verdicts
    if bundle.mode == MODE_CHAT:
        messages = bundle.messages + (
            Message(role="assistant", content=response_text),
            Message(role="user", content=FIX_REQUEST),
        )
        return PromptBundle(
            mode=MODE_CHAT,
            messages=messages,
            presented_blocks=bundle.presented_blocks,
        )
    reply = response_text
    if DEBUG_CLOSE in reply:
        reply = reply[: reply.index(DEBUG_CLOSE) + len(DEBUG_CLOSE)]
    else:
        reply = reply.rstrip("\n") + "\n" + DEBUG_CLOSE
    text = f"{bundle.text}{reply}\n{FIX_REQUEST}\n{PYTHON_OPEN}\n"
    return PromptBundle(
        mode=MODE_COMPLETION,
        text=text,
        presented_blocks=bundle.presented_blocks,
    )


def _coerce_correct(value) -> bool | None:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        low = value.strip().lower()
        if low == "true":
            return True
        if low == "false":
            return False
    return None


_LABEL_INDEX = re.compile(r"BLOCK-(\d+)$")


def _label_order(label: str, expected: list[str]) -> tuple[int, int]:
    if label in expected:
        return (0, expected.index(label))
    match = _LABEL_INDEX.search(label)
    return (1, int(match.group(1)) if match else 0)


def parse_verdicts(
    response_text: str, expected_labels: list[str], mode: str = MODE_CHAT
) -> list[BlockVerdict]:
    """Recover per-block verdicts from a model reply.

    Chat replies carry one JSON object per line; completion replies carry
    "[BLOCK-k] ... Feedback: CORRECT|INCORRECT." sections. Unknown labels are
    dropped with a warning, duplicates keep the first occurrence, and a reply
    with zero recognizable verdicts raises NoVerdictsParsed.
    """
    found: dict[str, BlockVerdict] = {}
    raw: list[tuple[str, bool, str]] = (
        _scan_chat(response_text) if mode == MODE_CHAT else _scan_completion(response_text)
    )
    for label, correct, explanation in raw:
        if label not in expected_labels:
            logger.warning("dropping verdict for unknown label %s", label)
            continue
        if label in found:
            continue
        if not correct and not explanation:
            explanation = MISSING_EXPLANATION
        found[label] = BlockVerdict(
            block_label=label, correct=correct, explanation=explanation
        )
    if not found:
        raise NoVerdictsParsed(
            f"no verdicts among {len(response_text.splitlines())} response lines"
        )
    ordered = sorted(found, key=lambda lab: _label_order(lab, expected_labels))
    return [found[label] for label in ordered]


def _scan_chat(text: str) -> list[tuple[str, bool, str]]:
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line.startswith("{"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            continue
        if not isinstance(obj, dict) or "block" not in obj:
            continue
        correct = _coerce_correct(obj.get("correct"))
        if correct is None:
            continue
        out.append((str(obj["block"]), correct, str(obj.get("explanation", ""))))
    return out


_FEEDBACK = re.compile(r"Feedback:\s*(CORRECT|INCORRECT)\.?\s*", re.IGNORECASE)
_SECTION_HEAD = re.compile(r"^\[(BLOCK-\d+)\]\s*$", re.MULTILINE)


def _scan_completion(text: str) -> list[tuple[str, bool, str]]:
    if DEBUG_CLOSE in text:
        text = text[: text.index(DEBUG_CLOSE)]
    out = []
    heads = list(_SECTION_HEAD.finditer(text))
    for i, head in enumerate(heads):
        end = heads[i + 1].start() if i + 1 < len(heads) else len(text)
        section = text[head.end() : end]
        feedback = _FEEDBACK.search(section)
        if not feedback:
            continue
        correct = feedback.group(1).upper() == "CORRECT"
        explanation = section[feedback.end() :].strip()
        out.append((head.group(1), correct, explanation))
    return out


_FENCE = re.compile(r"```[ \t]*[A-Za-z0-9_+-]*[ \t]*\n(.*?)```", re.DOTALL)
_PYTHON_REGION = re.compile(
    re.escape(PYTHON_OPEN) + r"\n?(.*?)(?:" + re.escape(PYTHON_CLOSE) + r"|\Z)",
    re.DOTALL,
)


def extract_program(response_text: str, entry_point: str) -> str:
    """The first fenced or [python]-delimited region defining the entry point;
    a bare-code reply (no delimiters, definition present) is taken whole."""
    def_pattern = re.compile(
        r"^\s*def\s+" + re.escape(entry_point) + r"\s*\(", re.MULTILINE
    )
    regions = [m.group(1) for m in _FENCE.finditer(response_text)]
    regions += [m.group(1) for m in _PYTHON_REGION.finditer(response_text)]
    for region in regions:
        if def_pattern.search(region):
            return region.strip("\n") + "\n"
    if not regions and def_pattern.search(response_text):
        return response_text.strip("\n") + "\n"
    raise NoProgramInResponse(
        f"no code region defines {entry_point!r} in a {len(response_text)}-char reply"
    )
