"""Capture adapter: generate reasoning traces with exact probe entropies.

Writes the line-oriented trace JSONL consumed by the replay toolkit; the
two packages interoperate only through that file format.
"""

from .capture import (
    DEFAULT_ANSWER_PREFIX,
    DEFAULT_PROBE_PREFIX,
    KNOWN_VARIANTS,
    SCHEMA_VERSION,
    CaptureConfig,
    CaptureError,
    capture_trace,
    dump_jsonl,
    ema_variance_trajectory,
    extract_boxed,
    load_jsonl,
    normalize_answer,
    recompute_probes,
    render_probe_text,
    variant_key,
)
from .model import (
    CHARSET,
    EOS_CHAR,
    THINK_CLOSE,
    THINK_OPEN,
    LanguageModel,
    ToyReasoningModel,
    entropy_from_logits,
    sample_token,
    softmax,
)

__all__ = [
    "CHARSET",
    "CaptureConfig",
    "CaptureError",
    "DEFAULT_ANSWER_PREFIX",
    "DEFAULT_PROBE_PREFIX",
    "EOS_CHAR",
    "KNOWN_VARIANTS",
    "LanguageModel",
    "SCHEMA_VERSION",
    "THINK_CLOSE",
    "THINK_OPEN",
    "ToyReasoningModel",
    "capture_trace",
    "dump_jsonl",
    "ema_variance_trajectory",
    "entropy_from_logits",
    "extract_boxed",
    "load_jsonl",
    "normalize_answer",
    "recompute_probes",
    "render_probe_text",
    "sample_token",
    "softmax",
    "variant_key",
]

__version__ = "0.1.0"
