"""Trace segmentation into dynamic basic blocks and intermediate states.

Blocks are derived from the observed event stream, not a static CFG: a loop
body produces one block occurrence per iteration. Boundary rules at block
granularity:

  - an entry-function call event starts a new block;
  - a line event whose line number is <= the previous entry-function line
    starts a new block (backward transition: loop back-edge or re-entry);
  - return and exception events close the block after themselves; the next
    line or call event starts a new one. A return immediately following an
    exception (stack unwind) stays in the same block, since nothing ran
    between them.

Forward skips (a branch jumping past lines) stay inside a block; line numbers
within one block occurrence are strictly increasing. Events from frames other
than the entry function (helpers, genexprs) are folded into whichever block
is open: they count for coverage but contribute neither lines nor snapshots.

Line granularity gives one block per entry-function line event; function
granularity one block per entry-function call event.
"""

from __future__ import annotations

from dataclasses import dataclass

from .bridge import RETURN_BINDING, TraceEvent
from .model import VariableSnapshot

LEVEL_LINE = "line"
LEVEL_BLOCK = "block"
LEVEL_FUNCTION = "function"
LEVELS = frozenset({LEVEL_LINE, LEVEL_BLOCK, LEVEL_FUNCTION})

BLOCK_LABEL_TEMPLATE = "BLOCK-{index}"


class EmptyTraceError(Exception):
    """Segmentation got an empty event list."""


class BlockEventMismatch(Exception):
    """Blocks do not tile the event list they were segmented from."""


@dataclass(frozen=True)
class TraceBlock:
    """One dynamic basic block occurrence.

    line_span lists (line_no, source text) actually executed in this
    occurrence; event_start/event_stop delimit the half-open slice of the
    original event list this block covers.
    """

    index: int
    label: str
    line_span: tuple[tuple[int, str], ...]
    level: str
    event_start: int
    event_stop: int


@dataclass(frozen=True)
class BlockState:
    """Variable bindings entering a block, the block, and bindings after it."""

    entry: VariableSnapshot
    block: TraceBlock
    exit: VariableSnapshot


def segment_blocks(
    events: list[TraceEvent] | tuple[TraceEvent, ...], level: str, source: str
) -> list[TraceBlock]:
    """Split one run's events into blocks at the requested granularity."""
    if not events:
        raise EmptyTraceError("cannot segment an empty trace")
    if level not in LEVELS:
        raise ValueError(f"unknown decomposition level {level!r}")
    entry_function = events[0].function
    source_lines = source.splitlines()

    boundaries: list[int] = []  # indices where a new block starts
    prev_sig_kind: str | None = None
    prev_sig_line: int | None = None
    pending_close = False
    for i, event in enumerate(events):
        if event.function != entry_function:
            continue
        kind = event.event_kind
        if kind == "call":
            boundaries.append(i)
            pending_close = False
        elif kind == "line":
            if level != LEVEL_FUNCTION:
                back_edge = (
                    prev_sig_kind == "line"
                    and prev_sig_line is not None
                    and event.line_no <= prev_sig_line
                )
                split_every_line = level == LEVEL_LINE and prev_sig_kind == "line"
                if pending_close or back_edge or split_every_line:
                    boundaries.append(i)
            pending_close = False
        else:  # return or exception
            if level != LEVEL_FUNCTION:
                pending_close = True
        prev_sig_kind = kind
        prev_sig_line = event.line_no
    if not boundaries or boundaries[0] != 0:
        # Defensive: a trace normally opens with the entry call event.
        boundaries.insert(0, 0)

    blocks: list[TraceBlock] = []
    stops = boundaries[1:] + [len(events)]
    for index, (start, stop) in enumerate(zip(boundaries, stops)):
        blocks.append(
            _build_block(events, index, start, stop, level, entry_function, source_lines)
        )
    return blocks


def _build_block(
    events,
    index: int,
    start: int,
    stop: int,
    level: str,
    entry_function: str,
    source_lines: list[str],
) -> TraceBlock:
    def text_of(line_no: int) -> str:
        if 1 <= line_no <= len(source_lines):
            return source_lines[line_no - 1]
        return ""

    executed = [
        e.line_no
        for e in events[start:stop]
        if e.function == entry_function and e.event_kind == "line"
    ]
    if level == LEVEL_FUNCTION:
        executed = sorted(set(executed))
    if not executed:
        # Block closed without running a line (e.g. lone unwind); fall back
        # to the line of its last entry-frame event so the span is nonempty.
        for e in reversed(events[start:stop]):
            if e.function == entry_function:
                executed = [e.line_no]
                break
        else:
            executed = [events[start].line_no]
    return TraceBlock(
        index=index,
        label=BLOCK_LABEL_TEMPLATE.format(index=index),
        line_span=tuple((n, text_of(n)) for n in executed),
        level=level,
        event_start=start,
        event_stop=stop,
    )


def compute_intermediate_states(
    blocks: list[TraceBlock], events: list[TraceEvent] | tuple[TraceEvent, ...]
) -> list[BlockState]:
    """Chain entry/exit snapshots along the blocks.

    Entry of block 0 is the argument snapshot from the entry call event
    (empty for a zero-argument function); entry of block i is exit of block
    i-1; exit of block i is the snapshot after its last entry-frame event.
    Renderings are taken from the events untouched.
    """
    if not blocks:
        if events:
            raise BlockEventMismatch("no blocks for a nonempty event list")
        return []
    _check_tiling(blocks, len(events))
    entry_function = events[0].function
    first = events[blocks[0].event_start]
    current: VariableSnapshot
    current = first.snapshot if first.event_kind == "call" else VariableSnapshot()
    states: list[BlockState] = []
    for block in blocks:
        exit_snapshot = current
        for event in reversed(events[block.event_start : block.event_stop]):
            if event.function == entry_function:
                exit_snapshot = event.snapshot
                break
        states.append(BlockState(entry=current, block=block, exit=exit_snapshot))
        current = exit_snapshot
    return states


def _check_tiling(blocks: list[TraceBlock], event_count: int) -> None:
    position = 0
    for block in blocks:
        if block.event_start != position or block.event_stop <= block.event_start:
            raise BlockEventMismatch(
                f"{block.label} covers [{block.event_start}, {block.event_stop}) "
                f"but expected to start at {position}"
            )
        position = block.event_stop
    if position != event_count:
        raise BlockEventMismatch(
            f"blocks cover {position} events of {event_count}"
        )


def _comment_indent(block: TraceBlock) -> str:
    first_text = block.line_span[0][1]
    return first_text[: len(first_text) - len(first_text.lstrip())]


def render_snapshot_comment(snapshot: VariableSnapshot, indent: str) -> str:
    """One "# name=value" comment line, bindings tab-separated in name order
    with the return binding forced last, or "" when there are none."""
    if not snapshot.bindings:
        return ""
    names = sorted(snapshot.bindings, key=lambda n: (n == RETURN_BINDING, n))
    joined = "\t".join(f"{name}={snapshot.bindings[name]}" for name in names)
    return f"{indent}# {joined}"


def render_block_section(state: BlockState) -> str:
    """The labeled block section used in prompts and trace dumps:

    [BLOCK-k]
        # entry bindings
    <executed source lines>
        # exit bindings

    Empty snapshots render no comment line.
    """
    indent = _comment_indent(state.block)
    parts = [f"[{state.block.label}]"]
    entry_comment = render_snapshot_comment(state.entry, indent)
    if entry_comment:
        parts.append(entry_comment)
    parts.extend(text for _, text in state.block.line_span)
    exit_comment = render_snapshot_comment(state.exit, indent)
    if exit_comment:
        parts.append(exit_comment)
    return "\n".join(parts)


def render_trace_dump(states: list[BlockState]) -> str:
    """Annotated listing of every block state, for the CLI's trace dump."""
    return "\n".join(render_block_section(state) for state in states)
