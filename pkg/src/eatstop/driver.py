"""Live stopping loop against streaming completion endpoints.

One session drives one question: stream a think-block line, probe the
entropy after a hypothetical think-close, fold the reading into the EMA
state, decide, repeat.  Generation and probing strictly alternate; there is
never more than one in-flight request per session.  The probe endpoint may
differ from the reasoning endpoint (black-box mode), in which case the probe
model never generates any reasoning text, it only scores the next token.

Every session yields a replayable trace: the emitted lines carry the probe
values actually used, so the offline harness recovers the same exit point.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .answers import normalize_answer
from .client import CompletionsClient, EndpointError
from .signals import (
    PARAGRAPH_SEP,
    THINK_CLOSE,
    THINK_OPEN,
    EntropySample,
    ProbeContext,
    ProbeVariant,
    TokenDistribution,
    entropy,
    entropy_bounds_from_topk,
    render_probe,
)
from .stopping import (
    CONTINUE,
    EatVariance,
    EmaState,
    ExitReason,
    StopDecision,
    Verdict,
    decide_eat,
    ema_update,
)
from .trace import (
    SCHEMA_VERSION,
    DecodingConfig,
    LineRecord,
    ReasoningTrace,
)

DEFAULT_ANSWER_ELICIT_PREFIX = "Final answer:\n"

# Sum-to-one slack accepted from endpoints that claim full distributions.
FULL_DIST_TOL = 1e-6


class DriverError(Exception):
    """Unrecoverable live-session failure; carries the partial transcript."""

    def __init__(self, message: str, transcript: tuple["TranscriptEvent", ...] = ()):
        super().__init__(message)
        self.transcript = transcript


@dataclass(frozen=True)
class TranscriptEvent:
    kind: str
    detail: Mapping[str, object]


@dataclass(frozen=True)
class SessionState:
    question_id: str
    question: str
    lines: tuple[str, ...] = ()
    tokens_used: int = 0
    end_think_seen: bool = False
    ema: EmaState | None = None
    transcript: tuple[TranscriptEvent, ...] = ()
    tokens_approximate: bool = False

    def log(self, kind: str, **detail: object) -> "SessionState":
        event = TranscriptEvent(kind=kind, detail=detail)
        return dataclasses.replace(self, transcript=self.transcript + (event,))


@dataclass(frozen=True)
class LineResult:
    text: str
    token_count: int
    end_think_seen: bool
    finish_note: str | None = None


@dataclass(frozen=True)
class SessionResult:
    question_id: str
    exit_reason: ExitReason
    answer_text: str
    extracted_answer: str
    tokens_used: int
    trace: ReasoningTrace | None
    transcript: tuple[TranscriptEvent, ...]


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def generate_line(
    session: SessionState,
    client: CompletionsClient,
    *,
    temperature: float = 0.6,
    top_p: float = 0.95,
    max_tokens: int = 512,
    require_separator: bool = True,
) -> tuple[SessionState, LineResult]:
    """Stream tokens until a paragraph break, a think-close, or exhaustion.

    The paragraph separator stays attached to the returned line; the
    think-close marker is never part of any line.  Token counts come from
    counting stream chunks, which is approximate when a provider packs
    multiple tokens per chunk; end-of-stream usage totals are preferred when
    the stream is consumed to completion.  With require_separator off, a
    max_tokens cut is a normal block boundary rather than an anomaly
    (fixed-size probing schedules use this).
    """
    prompt = session.question + THINK_OPEN + "".join(session.lines)
    buffer = ""
    chunks = 0
    finish: str | None = None
    line_text: str | None = None
    end_think = False
    stream = client.stream_completion(
        prompt, max_tokens=max_tokens, temperature=temperature, top_p=top_p
    )
    for chunk in stream:
        if chunk.text:
            chunks += 1
            buffer += chunk.text
        if chunk.finish_reason:
            finish = chunk.finish_reason
        sep_at = buffer.find(PARAGRAPH_SEP)
        close_at = buffer.find(THINK_CLOSE)
        if close_at >= 0 and (sep_at < 0 or close_at < sep_at):
            line_text = buffer[:close_at]
            end_think = True
            break
        if sep_at >= 0:
            line_text = buffer[: sep_at + len(PARAGRAPH_SEP)]
            break
    stream.close()

    note = None
    if line_text is None:
        # Stream ended with no marker: end-of-sequence means the model is
        # done thinking; a max_tokens cut leaves a partial line behind.
        line_text = buffer
        if finish == "length":
            if require_separator:
                note = "max_tokens_exhausted_without_separator"
        else:
            end_think = True
            note = "end_of_sequence"

    token_count = chunks
    result = LineResult(
        text=line_text,
        token_count=token_count,
        end_think_seen=end_think,
        finish_note=note,
    )
    new_lines = session.lines + (line_text,) if line_text else session.lines
    session = dataclasses.replace(
        session,
        lines=new_lines,
        tokens_used=session.tokens_used + token_count,
        end_think_seen=session.end_think_seen or end_think,
        tokens_approximate=True,
    )
    session = session.log(
        "line",
        index=len(new_lines) - 1 if line_text else None,
        token_count=token_count,
        end_think_seen=end_think,
        note=note,
    )
    return session, result


def probe_eat(
    session: SessionState,
    client: CompletionsClient,
    variant: ProbeVariant,
) -> tuple[SessionState, EntropySample]:
    """Measure next-token entropy at the probe point for the current lines.

    Costs one generated token.  Endpoints exposing the full distribution
    give exact values; top-k endpoints give an interval and the conservative
    upper bound is recorded as the value, so limited observability can only
    delay a variance exit, never force one early.
    """
    ctx = ProbeContext(question=session.question, lines=session.lines, variant=variant)
    text = render_probe(ctx)
    config = client.config
    result = client.complete(
        text,
        max_tokens=1,
        temperature=1.0,
        top_p=1.0,
        logprobs=config.max_top_logprobs,
    )
    if not result.top_logprobs:
        raise EndpointError(
            f"endpoint {config.model_id!r} returned no log-probabilities; "
            "entropy probes need logprobs support"
        )
    logprobs = list(result.top_logprobs.values())
    lower: float | None = None
    upper: float | None = None
    if config.supports_full_distribution:
        masses = np.exp(np.asarray(logprobs, dtype=np.float64))
        total = float(masses.sum())
        if abs(total - 1.0) > FULL_DIST_TOL:
            raise EndpointError(
                f"endpoint {config.model_id!r} claims full distributions but "
                f"masses sum to {total!r}"
            )
        dist = TokenDistribution.from_probs((masses / total).tolist())
        value = entropy(dist)
    else:
        if config.vocab_size is None:
            raise EndpointError(
                f"endpoint {config.model_id!r} serves top-k logprobs only; "
                "vocab_size is required to bound the entropy"
            )
        dist = TokenDistribution.from_topk(logprobs, vocab_size=config.vocab_size)
        lower, upper = entropy_bounds_from_topk(dist)
        value = upper
    sample = EntropySample(
        value=value,
        line_index=max(0, len(session.lines) - 1),
        cumulative_reasoning_tokens=session.tokens_used,
        probe_model_id=config.model_id,
        variant=variant,
        lower=lower,
        upper=upper,
    )
    session = session.log(
        "probe",
        probe_model_id=config.model_id,
        variant=variant.key,
        value=value,
        lower=lower,
        upper=upper,
        line_index=sample.line_index,
    )
    return session, sample


def elicit_answer(
    context_text: str,
    client: CompletionsClient,
    *,
    answer_prefix: str = DEFAULT_ANSWER_ELICIT_PREFIX,
    max_tokens: int = 1024,
    temperature: float = 0.6,
    top_p: float = 0.95,
) -> tuple[str, str]:
    """Complete the closed think block into a final answer.

    Returns (raw completion, extracted normalized answer).  An empty
    completion is an error; callers decide whether to surface or tolerate.
    """
    if not context_text.endswith(THINK_CLOSE):
        raise ValueError(f"context must end with {THINK_CLOSE!r}")
    result = client.complete(
        context_text + answer_prefix,
        max_tokens=max_tokens,
        temperature=temperature,
        top_p=top_p,
    )
    if not result.text:
        raise EndpointError("answer elicitation returned an empty completion")
    return result.text, normalize_answer(result.text)


# ---------------------------------------------------------------------------
# session loop
# ---------------------------------------------------------------------------


def _parse_schedule(probe_schedule: str) -> int | None:
    """None for per-line probing, else the fixed token block size."""
    if probe_schedule == "line":
        return None
    if probe_schedule.startswith("tokens:"):
        size = int(probe_schedule.split(":", 1)[1])
        if size < 1:
            raise ValueError("token block size must be >= 1")
        return size
    raise ValueError(f"unknown probe schedule {probe_schedule!r}")


def run_session(
    question_id: str,
    question: str,
    policy: EatVariance,
    reasoning: CompletionsClient,
    probe: CompletionsClient | None = None,
    *,
    temperature: float = 0.6,
    top_p: float = 0.95,
    max_line_tokens: int = 512,
    answer_max_tokens: int = 1024,
    answer_prefix: str = DEFAULT_ANSWER_ELICIT_PREFIX,
    probe_schedule: str = "line",
    dataset: str = "live",
) -> SessionResult:
    """Drive one question to an early exit and a final answer.

    Probe failures degrade to "continue": a missing reading is never
    fabricated, and only the budget and end-think conditions can stop the
    session on such a step.  Unrecoverable generation failures raise
    DriverError with the partial transcript attached.
    """
    probe_client = probe if probe is not None else reasoning
    block = _parse_schedule(probe_schedule)
    session = SessionState(question_id=question_id, question=question)
    session = dataclasses.replace(session, ema=EmaState.fresh(policy.alpha))
    records: list[dict] = []
    exit_reason = ExitReason.TOKEN_LIMIT_REACHED

    while True:
        remaining = policy.token_limit - session.tokens_used
        cap = max(1, min(block if block is not None else max_line_tokens, remaining))
        try:
            session, line = generate_line(
                session,
                reasoning,
                temperature=temperature,
                top_p=top_p,
                max_tokens=cap,
                require_separator=block is None,
            )
        except EndpointError as e:
            session = session.log("error", stage="generate", message=str(e))
            raise DriverError(
                f"session {question_id!r}: generation failed: {e}", session.transcript
            ) from e

        if line.text:
            records.append(
                {"text": line.text, "token_count": line.token_count, "probes": {}}
            )
        elif not session.end_think_seen:
            session = session.log("error", stage="generate", message="empty line")
            raise DriverError(
                f"session {question_id!r}: endpoint made no progress", session.transcript
            )

        probe_ok = False
        if line.text:
            try:
                session, sample = probe_eat(session, probe_client, policy.probe_variant)
                assert session.ema is not None
                session = dataclasses.replace(session, ema=ema_update(session.ema, sample.value))
                key = (probe_client.config.model_id, policy.probe_variant.key)
                records[-1]["probes"][key] = sample.value
                probe_ok = True
            except EndpointError as e:
                session = session.log("error", stage="probe", message=str(e))

        assert session.ema is not None
        if probe_ok:
            decision = decide_eat(
                session.ema, policy, session.tokens_used, session.end_think_seen
            )
        elif session.end_think_seen:
            decision = StopDecision(Verdict.EXIT, ExitReason.END_THINK_EMITTED)
        elif session.tokens_used >= policy.token_limit:
            decision = StopDecision(Verdict.EXIT, ExitReason.TOKEN_LIMIT_REACHED)
        else:
            decision = CONTINUE
        session = session.log(
            "decision",
            verdict=decision.verdict.value,
            reason=decision.reason.value,
            tokens_used=session.tokens_used,
            ema_mean=session.ema.mean,
            ema_var=session.ema.var,
            n=session.ema.n,
        )
        if decision.should_exit:
            exit_reason = decision.reason
            break

    session = session.log("exit", reason=exit_reason.value, tokens_used=session.tokens_used)

    context = session.question + THINK_OPEN + "".join(session.lines) + THINK_CLOSE
    answer_text = ""
    extracted = ""
    try:
        answer_text, extracted = elicit_answer(
            context,
            reasoning,
            answer_prefix=answer_prefix,
            max_tokens=answer_max_tokens,
            temperature=temperature,
            top_p=top_p,
        )
    except EndpointError as e:
        session = session.log("error", stage="answer", message=str(e))
    session = session.log("answer", text=answer_text, extracted=extracted)

    trace = None
    if records:
        trace = ReasoningTrace(
            schema_version=SCHEMA_VERSION,
            question_id=question_id,
            dataset=dataset,
            question=question,
            reasoning_model_id=reasoning.config.model_id,
            decoding=DecodingConfig(temperature=temperature, top_p=top_p),
            lines=tuple(
                LineRecord(
                    index=i,
                    text=r["text"],
                    token_count=r["token_count"],
                    probes=r["probes"],
                )
                for i, r in enumerate(records)
            ),
            ended_with_end_think=exit_reason is ExitReason.END_THINK_EMITTED,
            meta={
                "producer": "eatstop.driver",
                "exit_reason": exit_reason.value,
                "probe_model_id": probe_client.config.model_id,
                "probe_schedule": probe_schedule,
                "token_count_source": "stream_chunks",
            },
        )
    return SessionResult(
        question_id=question_id,
        exit_reason=exit_reason,
        answer_text=answer_text,
        extracted_answer=extracted,
        tokens_used=session.tokens_used,
        trace=trace,
        transcript=session.transcript,
    )
