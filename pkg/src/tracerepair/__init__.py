"""Iterative repair of failing programs guided by runtime traces.

A candidate program that fails its visible tests is executed under a
line-level tracer through an external harness process, the trace is cut into
dynamic blocks annotated with the variable states entering and leaving each
block, a model judges every block in one batched query, and a fresh program
is requested until the visible tests pass or the iteration cap is reached.
Hidden tests are only ever consulted by the final evaluation step.
"""

from .bridge import (
    ExecutionResult,
    HarnessBridge,
    HarnessProtocolError,
    HarnessSpawnError,
    ResourceLimits,
    TestReport,
    TraceEvent,
    parse_trace_events,
)
from .corpus import CorpusFormatError, load_corpus, load_task_file, save_task
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
from .gateway import (
    AuditLog,
    AuthError,
    BackendScriptExhausted,
    HttpBackend,
    ModelParams,
    ModelResponse,
    ScriptedBackend,
    TransportError,
    estimate_tokens,
    make_backend,
)
from .model import (
    BlockVerdict,
    DebugTask,
    Program,
    TestCase,
    ValidationReport,
    VariableSnapshot,
    validate_task,
)
from .orchestrator import (
    CorpusReport,
    DebugOutcome,
    EvalResult,
    IterationRecord,
    TaskRunRecord,
    debug_task,
    evaluate,
    run_corpus,
)
from .profiler import (
    BlockState,
    EmptyTraceError,
    TraceBlock,
    compute_intermediate_states,
    render_snapshot_comment,
    render_trace_dump,
    segment_blocks,
)
from .reporting import emit_report, summary_text

__version__ = "0.1.0"

__all__ = [
    "AuditLog",
    "AuthError",
    "BackendScriptExhausted",
    "BlockState",
    "BlockVerdict",
    "BudgetUnsatisfiable",
    "CorpusFormatError",
    "CorpusReport",
    "DebugConfig",
    "DebugOutcome",
    "DebugTask",
    "EmptyTraceError",
    "EvalResult",
    "ExecutionResult",
    "HarnessBridge",
    "HarnessProtocolError",
    "HarnessSpawnError",
    "HttpBackend",
    "IterationRecord",
    "ModelParams",
    "ModelResponse",
    "NoProgramInResponse",
    "NoVerdictsParsed",
    "Program",
    "PromptBundle",
    "ResourceLimits",
    "ScriptedBackend",
    "TaskRunRecord",
    "TestCase",
    "TestReport",
    "TraceBlock",
    "TraceEvent",
    "TransportError",
    "ValidationReport",
    "VariableSnapshot",
    "build_debug_prompt",
    "build_failure_prompt",
    "build_regeneration_prompt",
    "compute_intermediate_states",
    "debug_task",
    "emit_report",
    "estimate_tokens",
    "evaluate",
    "extract_program",
    "load_corpus",
    "load_task_file",
    "make_backend",
    "parse_trace_events",
    "parse_verdicts",
    "render_snapshot_comment",
    "render_trace_dump",
    "run_corpus",
    "save_task",
    "segment_blocks",
    "select_blocks",
    "summary_text",
    "validate_task",
    "__version__",
]
