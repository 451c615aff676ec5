"""Entropy-based early exiting for reasoning language models.

The package watches the model's confidence about its final answer while the
think block is still being generated: after each reasoning line it measures
the next-token entropy the model would have if the block were closed right
there, tracks that stream with an exponential moving average, and exits as
soon as the EMA variance settles below a threshold.  An offline harness
replays the same decision rule over stored traces; a live driver applies it
against OpenAI-compatible streaming endpoints.
"""

from .answers import extract_boxed, normalize_answer
from .client import CompletionsClient, EndpointConfig, EndpointError
from .driver import (
    DriverError,
    SessionResult,
    SessionState,
    elicit_answer,
    generate_line,
    probe_eat,
    run_session,
)
from .replay import (
    CurvePoint,
    EfficiencyCurve,
    ExitOutcome,
    ReplayError,
    aggregate_pass1,
    auc,
    emit_report,
    filter_solvable,
    simulate_policy,
    sweep,
)
from .signals import (
    EntropySample,
    ProbeContext,
    ProbeVariant,
    TokenDistribution,
    entropy,
    entropy_bounds_from_topk,
    information_gain,
    render_probe,
)
from .stopping import (
    EatVariance,
    EmaState,
    ExitReason,
    StopDecision,
    StoppingPolicy,
    TokenBudget,
    UniqueAnswers,
    Verdict,
    decide_eat,
    decide_token,
    decide_uak,
    ema_update,
    unique_answer_count,
    warmup_floor,
)
from .trace import (
    DecodingConfig,
    LineRecord,
    ReasoningTrace,
    RolloutRecord,
    TraceDataError,
    TraceError,
    TraceFormatError,
    TraceInvariantError,
    TraceSchemaError,
    cumulative_tokens,
    load_traces,
    parse_trace,
    pass1_at,
    save_traces,
    serialize_trace,
    truncate_trace,
)

__version__ = "0.1.0"

__all__ = [
    "CompletionsClient",
    "CurvePoint",
    "DecodingConfig",
    "DriverError",
    "EatVariance",
    "EfficiencyCurve",
    "EmaState",
    "EndpointConfig",
    "EndpointError",
    "EntropySample",
    "ExitOutcome",
    "ExitReason",
    "LineRecord",
    "ProbeContext",
    "ProbeVariant",
    "ReasoningTrace",
    "ReplayError",
    "RolloutRecord",
    "SessionResult",
    "SessionState",
    "StopDecision",
    "StoppingPolicy",
    "TokenBudget",
    "TokenDistribution",
    "TraceDataError",
    "TraceError",
    "TraceFormatError",
    "TraceInvariantError",
    "TraceSchemaError",
    "UniqueAnswers",
    "Verdict",
    "aggregate_pass1",
    "auc",
    "cumulative_tokens",
    "decide_eat",
    "decide_token",
    "decide_uak",
    "elicit_answer",
    "ema_update",
    "emit_report",
    "entropy",
    "entropy_bounds_from_topk",
    "extract_boxed",
    "filter_solvable",
    "generate_line",
    "information_gain",
    "load_traces",
    "normalize_answer",
    "parse_trace",
    "pass1_at",
    "probe_eat",
    "render_probe",
    "run_session",
    "save_traces",
    "serialize_trace",
    "simulate_policy",
    "sweep",
    "truncate_trace",
    "unique_answer_count",
    "warmup_floor",
]
