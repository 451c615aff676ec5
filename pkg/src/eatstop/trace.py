"""Reasoning-trace data model and its JSONL wire format.

A trace records one stored reasoning chain for one question: the think-block
lines in order, per-line token counts, probe entropies keyed by
(probe_model_id, variant key), and optionally per-line answer rollouts or a
precomputed pass rate.  Traces are the interchange format between capture
tooling, the offline replay harness, and the live driver, so parsing is
strict and serialization is canonical (byte-stable for equal traces).

Schema version 1.  Wire form is one JSON object per line (JSONL); a single
object or an array of objects is also accepted when loading files.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

SCHEMA_VERSION = 1

# Allowed |pass1 - mean(rollout.correct)| when both are present.
PASS1_TOL = 1e-9


class TraceError(Exception):
    """Base class for trace-format problems."""


class TraceFormatError(TraceError):
    """Input is not parseable JSON / JSONL at all."""


class TraceSchemaError(TraceError):
    """A required field is missing or has the wrong type."""


class TraceInvariantError(TraceError):
    """Fields parse but violate a semantic invariant."""


class TraceDataError(TraceError):
    """The trace is valid but lacks data needed for the requested operation."""


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecodingConfig:
    temperature: float
    top_p: float

    def __post_init__(self) -> None:
        if self.temperature < 0.0:
            raise TraceInvariantError("decoding.temperature must be >= 0")
        if not 0.0 < self.top_p <= 1.0:
            raise TraceInvariantError("decoding.top_p must be in (0, 1]")


@dataclass(frozen=True)
class RolloutRecord:
    """One sampled answer at a truncation point."""

    answer_text: str
    extracted_answer: str
    correct: bool
    token_count: int | None = None

    def __post_init__(self) -> None:
        if self.token_count is not None and self.token_count < 0:
            raise TraceInvariantError("rollout token_count must be >= 0")


@dataclass(frozen=True)
class LineRecord:
    """One think-block line with everything recorded at its boundary."""

    index: int
    text: str
    token_count: int
    probes: Mapping[tuple[str, str], float] = field(default_factory=dict)
    rollouts: tuple[RolloutRecord, ...] | None = None
    pass1: float | None = None

    def __post_init__(self) -> None:
        if self.index < 0:
            raise TraceInvariantError(f"line index must be >= 0, got {self.index}")
        if self.token_count < 1:
            raise TraceInvariantError(
                f"line {self.index}: token_count must be >= 1, got {self.token_count}"
            )
        for key, value in self.probes.items():
            if not (math.isfinite(value) and value >= 0.0):
                raise TraceInvariantError(
                    f"line {self.index}: probe {key!r} must be finite and >= 0, got {value!r}"
                )
        if self.pass1 is not None and not 0.0 <= self.pass1 <= 1.0:
            raise TraceInvariantError(
                f"line {self.index}: pass1 must be in [0, 1], got {self.pass1!r}"
            )
        if self.pass1 is not None and self.rollouts:
            frac = sum(1 for r in self.rollouts if r.correct) / len(self.rollouts)
            if abs(frac - self.pass1) > PASS1_TOL:
                raise TraceInvariantError(
                    f"line {self.index}: pass1 {self.pass1!r} disagrees with "
                    f"rollout fraction {frac!r}"
                )

    def rollout_pass1(self) -> float | None:
        if self.rollouts:
            return sum(1 for r in self.rollouts if r.correct) / len(self.rollouts)
        return None


@dataclass(frozen=True)
class ReasoningTrace:
    schema_version: int
    question_id: str
    dataset: str
    question: str
    reasoning_model_id: str
    decoding: DecodingConfig
    lines: tuple[LineRecord, ...]
    ended_with_end_think: bool
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise TraceSchemaError(
                f"unsupported schema_version {self.schema_version!r}; "
                f"this build reads version {SCHEMA_VERSION}"
            )
        if not self.question_id:
            raise TraceInvariantError("question_id must be non-empty")
        if not self.lines:
            raise TraceInvariantError(f"trace {self.question_id!r}: lines must be non-empty")
        for want, line in enumerate(self.lines):
            if line.index != want:
                raise TraceInvariantError(
                    f"trace {self.question_id!r}: line indices must be contiguous "
                    f"from 0, found {line.index} at position {want}"
                )


def cumulative_tokens(trace: ReasoningTrace, line_index: int) -> int:
    """Total reasoning tokens through line_index inclusive."""
    if not 0 <= line_index < len(trace.lines):
        raise IndexError(
            f"line_index {line_index} out of range for trace {trace.question_id!r} "
            f"with {len(trace.lines)} lines"
        )
    return sum(line.token_count for line in trace.lines[: line_index + 1])


def cumulative_token_table(trace: ReasoningTrace) -> tuple[int, ...]:
    """Running totals per line; strictly increasing since counts are >= 1."""
    return tuple(itertools.accumulate(line.token_count for line in trace.lines))


def pass1_at(trace: ReasoningTrace, line_index: int) -> float:
    """Pass rate at a truncation point: stored pass1 or the rollout fraction."""
    if not 0 <= line_index < len(trace.lines):
        raise IndexError(
            f"line_index {line_index} out of range for trace {trace.question_id!r} "
            f"with {len(trace.lines)} lines"
        )
    line = trace.lines[line_index]
    if line.pass1 is not None:
        return line.pass1
    frac = line.rollout_pass1()
    if frac is None:
        raise TraceDataError(
            f"trace {trace.question_id!r} line {line_index}: no pass1 and no rollouts"
        )
    return frac


def truncate_trace(trace: ReasoningTrace, line_index: int) -> ReasoningTrace:
    """The trace as if capture had stopped right after line_index."""
    if not 0 <= line_index < len(trace.lines):
        raise IndexError(
            f"line_index {line_index} out of range for trace {trace.question_id!r} "
            f"with {len(trace.lines)} lines"
        )
    last = len(trace.lines) - 1
    ended = trace.ended_with_end_think and line_index == last
    return ReasoningTrace(
        schema_version=trace.schema_version,
        question_id=trace.question_id,
        dataset=trace.dataset,
        question=trace.question,
        reasoning_model_id=trace.reasoning_model_id,
        decoding=trace.decoding,
        lines=trace.lines[: line_index + 1],
        ended_with_end_think=ended,
        meta=dict(trace.meta),
    )


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_TOP_FIELDS = {
    "schema_version",
    "question_id",
    "dataset",
    "question",
    "reasoning_model_id",
    "decoding",
    "lines",
    "ended_with_end_think",
    "meta",
}


def _need(obj: Mapping[str, Any], field_name: str, where: str) -> Any:
    if field_name not in obj:
        raise TraceSchemaError(f"{where}: missing required field {field_name!r}")
    return obj[field_name]


def _as_str(value: Any, where: str) -> str:
    if not isinstance(value, str):
        raise TraceSchemaError(f"{where}: expected string, got {type(value).__name__}")
    return value


def _as_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise TraceSchemaError(f"{where}: expected integer, got {type(value).__name__}")
    return value


def _as_float(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TraceSchemaError(f"{where}: expected number, got {type(value).__name__}")
    return float(value)


def _as_bool(value: Any, where: str) -> bool:
    if not isinstance(value, bool):
        raise TraceSchemaError(f"{where}: expected boolean, got {type(value).__name__}")
    return value


def _parse_probes(value: Any, where: str) -> dict[tuple[str, str], float]:
    if not isinstance(value, dict):
        raise TraceSchemaError(f"{where}: probes must be an object")
    out: dict[tuple[str, str], float] = {}
    for model_id, variants in value.items():
        if not isinstance(variants, dict):
            raise TraceSchemaError(
                f"{where}: probes[{model_id!r}] must be an object of variant -> value"
            )
        for variant_key, v in variants.items():
            out[(model_id, variant_key)] = _as_float(
                v, f"{where}: probes[{model_id!r}][{variant_key!r}]"
            )
    return out


def _located(where: str, make):
    """Run a record constructor, prefixing invariant errors with a JSON path."""
    try:
        return make()
    except TraceInvariantError as e:
        raise TraceInvariantError(f"{where}: {e}") from e


def _parse_rollout(obj: Any, where: str) -> RolloutRecord:
    if not isinstance(obj, dict):
        raise TraceSchemaError(f"{where}: rollout must be an object")
    token_count = None
    if obj.get("token_count") is not None:
        token_count = _as_int(obj["token_count"], f"{where}.token_count")
    return _located(where, lambda: RolloutRecord(
        answer_text=_as_str(_need(obj, "answer_text", where), f"{where}.answer_text"),
        extracted_answer=_as_str(
            _need(obj, "extracted_answer", where), f"{where}.extracted_answer"
        ),
        correct=_as_bool(_need(obj, "correct", where), f"{where}.correct"),
        token_count=token_count,
    ))


def _parse_line(obj: Any, where: str) -> LineRecord:
    if not isinstance(obj, dict):
        raise TraceSchemaError(f"{where}: line must be an object")
    rollouts = None
    if obj.get("rollouts") is not None:
        raw = obj["rollouts"]
        if not isinstance(raw, list):
            raise TraceSchemaError(f"{where}.rollouts: expected array")
        rollouts = tuple(
            _parse_rollout(r, f"{where}.rollouts[{i}]") for i, r in enumerate(raw)
        )
    pass1 = None
    if obj.get("pass1") is not None:
        pass1 = _as_float(obj["pass1"], f"{where}.pass1")
    return _located(where, lambda: LineRecord(
        index=_as_int(_need(obj, "index", where), f"{where}.index"),
        text=_as_str(_need(obj, "text", where), f"{where}.text"),
        token_count=_as_int(_need(obj, "token_count", where), f"{where}.token_count"),
        probes=_parse_probes(obj.get("probes", {}), where),
        rollouts=rollouts,
        pass1=pass1,
    ))


def trace_from_obj(obj: Any, where: str = "trace") -> ReasoningTrace:
    if not isinstance(obj, dict):
        raise TraceSchemaError(f"{where}: expected a JSON object, got {type(obj).__name__}")
    dec_obj = _need(obj, "decoding", where)
    if not isinstance(dec_obj, dict):
        raise TraceSchemaError(f"{where}.decoding: expected object")
    decoding = _located(f"{where}.decoding", lambda: DecodingConfig(
        temperature=_as_float(
            _need(dec_obj, "temperature", f"{where}.decoding"), f"{where}.decoding.temperature"
        ),
        top_p=_as_float(_need(dec_obj, "top_p", f"{where}.decoding"), f"{where}.decoding.top_p"),
    ))
    lines_raw = _need(obj, "lines", where)
    if not isinstance(lines_raw, list):
        raise TraceSchemaError(f"{where}.lines: expected array")
    lines = tuple(_parse_line(l, f"{where}.lines[{i}]") for i, l in enumerate(lines_raw))

    meta: dict[str, str] = {}
    meta_raw = obj.get("meta", {})
    if not isinstance(meta_raw, dict):
        raise TraceSchemaError(f"{where}.meta: expected object")
    for k, v in meta_raw.items():
        meta[str(k)] = _as_str(v, f"{where}.meta[{k!r}]")
    # Forward compatibility: unknown top-level fields survive round trips
    # as meta entries instead of being dropped.
    for k in obj:
        if k not in _TOP_FIELDS:
            if k in meta:
                raise TraceSchemaError(
                    f"{where}: unknown field {k!r} collides with an existing meta key"
                )
            v = obj[k]
            meta[k] = v if isinstance(v, str) else json.dumps(v, sort_keys=True)

    return _located(where, lambda: ReasoningTrace(
        schema_version=_as_int(
            _need(obj, "schema_version", where), f"{where}.schema_version"
        ),
        question_id=_as_str(_need(obj, "question_id", where), f"{where}.question_id"),
        dataset=_as_str(_need(obj, "dataset", where), f"{where}.dataset"),
        question=_as_str(_need(obj, "question", where), f"{where}.question"),
        reasoning_model_id=_as_str(
            _need(obj, "reasoning_model_id", where), f"{where}.reasoning_model_id"
        ),
        decoding=decoding,
        lines=lines,
        ended_with_end_think=_as_bool(
            _need(obj, "ended_with_end_think", where), f"{where}.ended_with_end_think"
        ),
        meta=meta,
    ))


def parse_trace(data: str | bytes, where: str = "trace") -> ReasoningTrace:
    """Parse one JSON document into a validated trace."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise TraceFormatError(f"{where}: not valid UTF-8 ({e})") from e
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as e:
        raise TraceFormatError(f"{where}: invalid JSON at position {e.pos}: {e.msg}") from e
    return trace_from_obj(obj, where)


def parse_traces_jsonl(data: str | bytes, where: str = "input") -> list[ReasoningTrace]:
    """Parse a JSONL corpus (or a single object / array of objects)."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise TraceFormatError(f"{where}: not valid UTF-8 ({e})") from e
    try:
        whole = json.loads(data)
    except json.JSONDecodeError:
        whole = None
    if isinstance(whole, list):
        return [trace_from_obj(o, f"{where} item {i}") for i, o in enumerate(whole)]
    if isinstance(whole, dict):
        return [trace_from_obj(whole, where)]
    traces = []
    for lineno, raw in enumerate(data.splitlines(), start=1):
        if not raw.strip():
            continue
        traces.append(parse_trace(raw, f"{where} line {lineno}"))
    if not traces:
        raise TraceFormatError(f"{where}: no traces found")
    return traces


def load_traces(path: str) -> list[ReasoningTrace]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise TraceFormatError(f"{path}: cannot read ({e})") from e
    return parse_traces_jsonl(data, path)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _probes_to_obj(probes: Mapping[tuple[str, str], float]) -> dict[str, dict[str, float]]:
    nested: dict[str, dict[str, float]] = {}
    for (model_id, variant_key), value in probes.items():
        nested.setdefault(model_id, {})[variant_key] = value
    return {
        model_id: {k: variants[k] for k in sorted(variants)}
        for model_id, variants in sorted(nested.items())
    }


def trace_to_obj(trace: ReasoningTrace) -> dict[str, Any]:
    lines = []
    for line in trace.lines:
        entry: dict[str, Any] = {
            "index": line.index,
            "text": line.text,
            "token_count": line.token_count,
            "probes": _probes_to_obj(line.probes),
        }
        if line.rollouts is not None:
            entry["rollouts"] = [
                {
                    "answer_text": r.answer_text,
                    "extracted_answer": r.extracted_answer,
                    "correct": r.correct,
                    **({"token_count": r.token_count} if r.token_count is not None else {}),
                }
                for r in line.rollouts
            ]
        if line.pass1 is not None:
            entry["pass1"] = line.pass1
        lines.append(entry)
    return {
        "schema_version": trace.schema_version,
        "question_id": trace.question_id,
        "dataset": trace.dataset,
        "question": trace.question,
        "reasoning_model_id": trace.reasoning_model_id,
        "decoding": {
            "temperature": trace.decoding.temperature,
            "top_p": trace.decoding.top_p,
        },
        "ended_with_end_think": trace.ended_with_end_think,
        "lines": lines,
        "meta": {k: trace.meta[k] for k in sorted(trace.meta)},
    }


def serialize_trace(trace: ReasoningTrace) -> str:
    """Canonical single-line JSON; equal traces serialize to equal bytes.

    Floats use Python's shortest round-trip repr, which preserves the full
    value (at least 15 significant digits where they matter).
    """
    return json.dumps(trace_to_obj(trace), ensure_ascii=False, separators=(",", ":"))


def dump_traces_jsonl(traces: Iterable[ReasoningTrace]) -> str:
    return "".join(serialize_trace(t) + "\n" for t in traces)


def save_traces(traces: Iterable[ReasoningTrace], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_traces_jsonl(traces))
