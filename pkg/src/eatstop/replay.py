"""Offline replay of stop policies over stored reasoning traces.

Replay walks a trace's lines in order and re-runs a stopping decision at
every line boundary, exactly as the live loop would have: probe, fold the
reading into the EMA state, decide.  Because lines, probe values, and
rollouts are all recorded, the exit point any policy would have chosen is
recovered without touching a model, and a threshold sweep prices the whole
accuracy/compute trade-off curve from one capture pass.

Cost accounting separates the reasoning tokens actually kept (through the
stop line) from the policy's own overhead: one extra generated token per
entropy probe, or the sampled answer tokens consumed by agreement checks.
"""

from __future__ import annotations

import hashlib
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .stopping import (
    EatVariance,
    EmaState,
    ExitReason,
    StoppingPolicy,
    TokenBudget,
    UniqueAnswers,
    decide_eat,
    decide_token,
    decide_uak,
    ema_update,
)
from .trace import ReasoningTrace, TraceDataError, pass1_at

DEFAULT_PROBE_COST = 1
DEFAULT_FALLBACK_ROLLOUT_TOKENS = 256

# Threshold grids used by sweeps when none are given.
DELTA_GRID_NEG_POW2 = tuple(2.0 ** -k for k in range(40))
DELTA_GRID_POS_POW2 = tuple(2.0 ** k for k in range(40))
TOKEN_GRID_DEFAULT = tuple(250 * i for i in range(1, 41))
UAK_GRID_DEFAULT = tuple((k, d) for k in (8, 16, 32) for d in (1, 2, 3))


class ReplayError(Exception):
    """A trace could not be replayed under the requested policy."""


@dataclass(frozen=True)
class ExitOutcome:
    """Where a policy would have stopped on one trace, and at what cost.

    pass1_at_stop is None when the trace carries no verification data at the
    stop line (common for traces captured live, before any grading ran).
    """

    question_id: str
    policy: StoppingPolicy
    stop_line: int
    exit_reason: ExitReason
    reasoning_tokens: int
    overhead_tokens: int
    pass1_at_stop: float | None

    @property
    def total_tokens(self) -> int:
        return self.reasoning_tokens + self.overhead_tokens


def _stable_rng(*parts: object) -> random.Random:
    """Deterministic RNG derived from a key; independent of process hashing."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _maybe_pass1(trace: ReasoningTrace, line_index: int) -> float | None:
    line = trace.lines[line_index]
    if line.pass1 is None and line.rollout_pass1() is None:
        return None
    return pass1_at(trace, line_index)


def _resolve_probe_key(
    trace: ReasoningTrace,
    policy: EatVariance,
    probe_key: tuple[str, str] | None,
) -> tuple[str, str]:
    if probe_key is not None:
        return probe_key
    if policy.probe_model_id:
        return (policy.probe_model_id, policy.probe_variant.key)
    # Convenience: when every line carries exactly one probe series, use it.
    keys = set(trace.lines[0].probes)
    for line in trace.lines[1:]:
        keys &= set(line.probes)
    if len(keys) == 1:
        return next(iter(keys))
    raise TraceDataError(
        f"trace {trace.question_id!r}: cannot infer probe key; "
        f"common keys across lines: {sorted(keys)!r}"
    )


def _simulate_eat(
    trace: ReasoningTrace,
    policy: EatVariance,
    probe_key: tuple[str, str] | None,
    probe_cost: int,
) -> ExitOutcome:
    key = _resolve_probe_key(trace, policy, probe_key)
    state = EmaState.fresh(policy.alpha)
    tokens = 0
    last = len(trace.lines) - 1
    stop_line = last
    reason = ExitReason.TOKEN_LIMIT_REACHED  # trace exhausted without a verdict
    for i, line in enumerate(trace.lines):
        tokens += line.token_count
        if key not in line.probes:
            raise TraceDataError(
                f"trace {trace.question_id!r} line {i}: missing probe {key!r}"
            )
        state = ema_update(state, line.probes[key])
        end_think = trace.ended_with_end_think and i == last
        decision = decide_eat(state, policy, tokens, end_think)
        if decision.should_exit:
            stop_line, reason = i, decision.reason
            break
    reasoning = sum(l.token_count for l in trace.lines[: stop_line + 1])
    overhead = (stop_line + 1) * probe_cost
    return ExitOutcome(
        question_id=trace.question_id,
        policy=policy,
        stop_line=stop_line,
        exit_reason=reason,
        reasoning_tokens=reasoning,
        overhead_tokens=overhead,
        pass1_at_stop=_maybe_pass1(trace, stop_line),
    )


def _simulate_token(trace: ReasoningTrace, policy: TokenBudget) -> ExitOutcome:
    tokens = 0
    last = len(trace.lines) - 1
    stop_line = last
    reason = ExitReason.TOKEN_LIMIT_REACHED
    for i, line in enumerate(trace.lines):
        tokens += line.token_count
        end_think = trace.ended_with_end_think and i == last
        decision = decide_token(tokens, policy, end_think)
        if decision.should_exit:
            stop_line, reason = i, decision.reason
            break
    reasoning = sum(l.token_count for l in trace.lines[: stop_line + 1])
    return ExitOutcome(
        question_id=trace.question_id,
        policy=policy,
        stop_line=stop_line,
        exit_reason=reason,
        reasoning_tokens=reasoning,
        overhead_tokens=0,
        pass1_at_stop=_maybe_pass1(trace, stop_line),
    )


def _simulate_uak(
    trace: ReasoningTrace,
    policy: UniqueAnswers,
    seed: int,
    fallback_rollout_tokens: int,
) -> ExitOutcome:
    tokens = 0
    overhead = 0
    last = len(trace.lines) - 1
    stop_line = last
    reason = ExitReason.TOKEN_LIMIT_REACHED
    for i, line in enumerate(trace.lines):
        tokens += line.token_count
        if not line.rollouts:
            raise TraceDataError(
                f"trace {trace.question_id!r} line {i}: no rollouts recorded"
            )
        if len(line.rollouts) < policy.k:
            raise TraceDataError(
                f"trace {trace.question_id!r} line {i}: {len(line.rollouts)} rollouts "
                f"recorded but policy needs k={policy.k}"
            )
        rng = _stable_rng("uak", seed, trace.question_id, i)
        drawn = [line.rollouts[j] for j in rng.sample(range(len(line.rollouts)), policy.k)]
        for r in drawn:
            overhead += r.token_count if r.token_count is not None else fallback_rollout_tokens
        answers = [r.extracted_answer if r.extracted_answer else r.answer_text for r in drawn]
        end_think = trace.ended_with_end_think and i == last
        decision = decide_uak(answers, policy, tokens, end_think)
        if decision.should_exit:
            stop_line, reason = i, decision.reason
            break
    reasoning = sum(l.token_count for l in trace.lines[: stop_line + 1])
    return ExitOutcome(
        question_id=trace.question_id,
        policy=policy,
        stop_line=stop_line,
        exit_reason=reason,
        reasoning_tokens=reasoning,
        overhead_tokens=overhead,
        pass1_at_stop=_maybe_pass1(trace, stop_line),
    )


def simulate_policy(
    trace: ReasoningTrace,
    policy: StoppingPolicy,
    probe_key: tuple[str, str] | None = None,
    *,
    seed: int = 0,
    probe_cost: int = DEFAULT_PROBE_COST,
    fallback_rollout_tokens: int = DEFAULT_FALLBACK_ROLLOUT_TOKENS,
) -> ExitOutcome:
    """Recover the exit a policy would have taken on one stored trace.

    Decisions replay strictly in line order with no lookahead, so truncating
    the trace at the returned stop_line and replaying again reproduces the
    same outcome.  The seed only matters for answer-agreement policies,
    which subsample k of the recorded rollouts per line.
    """
    try:
        if isinstance(policy, EatVariance):
            return _simulate_eat(trace, policy, probe_key, probe_cost)
        if isinstance(policy, TokenBudget):
            return _simulate_token(trace, policy)
        if isinstance(policy, UniqueAnswers):
            return _simulate_uak(trace, policy, seed, fallback_rollout_tokens)
    except TraceDataError:
        raise
    except (ValueError, IndexError) as e:
        raise ReplayError(f"trace {trace.question_id!r}: {e}") from e
    raise ReplayError(f"unknown policy type {type(policy).__name__}")


def aggregate_pass1(outcomes: Sequence[ExitOutcome]) -> float:
    """Mean pass rate over questions; one outcome per question."""
    if not outcomes:
        raise ValueError("aggregate_pass1 needs at least one outcome")
    seen = set()
    for o in outcomes:
        if o.question_id in seen:
            raise ValueError(f"duplicate question_id {o.question_id!r} in outcomes")
        seen.add(o.question_id)
        if o.pass1_at_stop is None:
            raise ValueError(
                f"outcome for {o.question_id!r} has no pass rate; "
                "the trace carries no verification data at its stop line"
            )
    return sum(o.pass1_at_stop for o in outcomes) / len(outcomes)


# ---------------------------------------------------------------------------
# curves and sweeps
# ---------------------------------------------------------------------------

FAMILY_EAT = "eat_variance"
FAMILY_TOKEN = "token_budget"
FAMILY_UNIQUE = "unique_answers"


@dataclass(frozen=True)
class CurvePoint:
    threshold: str
    mean_total_tokens: float
    agg_pass1: float


@dataclass(frozen=True)
class EfficiencyCurve:
    policy_family: str
    points: tuple[CurvePoint, ...]
    auc: float


def auc(curve: "EfficiencyCurve | Sequence[tuple[float, float]]") -> float:
    """Area under pass-vs-tokens, trapezoidal, normalized by the token span.

    A curve that is constant in pass rate integrates to that constant.
    """
    if isinstance(curve, EfficiencyCurve):
        pts = [(p.mean_total_tokens, p.agg_pass1) for p in curve.points]
    else:
        pts = [(float(x), float(y)) for x, y in curve]
    pts.sort()
    xs = [x for x, _ in pts]
    if len(set(xs)) < 2:
        raise ValueError("auc needs at least two points with distinct token values")
    span = xs[-1] - xs[0]
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area / span


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def _policy_for(
    family: str,
    threshold,
    *,
    alpha: float,
    token_limit: int,
    probe_variant,
    probe_model_id: str,
) -> tuple[StoppingPolicy, str]:
    if family == FAMILY_EAT:
        policy = EatVariance(
            delta=float(threshold),
            alpha=alpha,
            token_limit=token_limit,
            probe_variant=probe_variant,
            probe_model_id=probe_model_id,
        )
        return policy, repr(float(threshold))
    if family == FAMILY_TOKEN:
        return TokenBudget(token_limit=int(threshold)), str(int(threshold))
    if family == FAMILY_UNIQUE:
        k, uniq = threshold
        policy = UniqueAnswers(k=int(k), uniq_threshold=int(uniq), token_limit=token_limit)
        return policy, f"k={int(k)},uniq={int(uniq)}"
    raise ValueError(f"unknown policy family {family!r}")


def sweep(
    traces: Sequence[ReasoningTrace],
    policy_family: str,
    thresholds: Sequence,
    *,
    alpha: float = 0.2,
    token_limit: int = 10_000,
    probe_variant=None,
    probe_model_id: str = "",
    probe_key: tuple[str, str] | None = None,
    probe_cost: int = DEFAULT_PROBE_COST,
    fallback_rollout_tokens: int = DEFAULT_FALLBACK_ROLLOUT_TOKENS,
    repeats: int = 1,
    seed: int = 0,
    parallel: int = 1,
) -> EfficiencyCurve:
    """One accuracy/cost point per threshold, over a whole corpus.

    Stochastic policies (answer agreement) are averaged over `repeats`
    independent subsampling draws per trace; deterministic policies ignore
    the repeat count.  Results are deterministic in (traces, thresholds,
    seed) regardless of parallelism.
    """
    from .signals import ProbeVariant

    if not traces:
        raise ValueError("sweep needs at least one trace")
    if not thresholds:
        raise ValueError("sweep needs at least one threshold")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if probe_variant is None:
        probe_variant = ProbeVariant.eat()

    def point_for(threshold) -> CurvePoint:
        policy, label = _policy_for(
            policy_family,
            threshold,
            alpha=alpha,
            token_limit=token_limit,
            probe_variant=probe_variant,
            probe_model_id=probe_model_id,
        )
        stochastic = isinstance(policy, UniqueAnswers)
        n_rep = repeats if stochastic else 1

        def one_trace(trace: ReasoningTrace) -> tuple[float, float]:
            totals, passes = [], []
            for rep in range(n_rep):
                rep_seed = seed if not stochastic else int.from_bytes(
                    hashlib.sha256(f"rep\x1f{seed}\x1f{rep}".encode()).digest()[:4], "big"
                )
                try:
                    out = simulate_policy(
                        trace,
                        policy,
                        probe_key,
                        seed=rep_seed,
                        probe_cost=probe_cost,
                        fallback_rollout_tokens=fallback_rollout_tokens,
                    )
                except TraceDataError as e:
                    raise ReplayError(str(e)) from e
                if out.pass1_at_stop is None:
                    raise ReplayError(
                        f"trace {trace.question_id!r}: sweeps need verification "
                        "data at every stop line"
                    )
                totals.append(float(out.total_tokens))
                passes.append(out.pass1_at_stop)
            return _mean(totals), _mean(passes)

        if parallel > 1:
            with ThreadPoolExecutor(max_workers=parallel) as pool:
                per_trace = list(pool.map(one_trace, traces))
        else:
            per_trace = [one_trace(t) for t in traces]
        mean_tokens = _mean([t for t, _ in per_trace])
        mean_pass = _mean([p for _, p in per_trace])
        return CurvePoint(threshold=label, mean_total_tokens=mean_tokens, agg_pass1=mean_pass)

    points = sorted(
        (point_for(t) for t in thresholds),
        key=lambda p: (p.mean_total_tokens, p.threshold),
    )
    xs = {p.mean_total_tokens for p in points}
    if len(points) >= 2 and len(xs) >= 2:
        area = auc([(p.mean_total_tokens, p.agg_pass1) for p in points])
    else:
        # Degenerate sweep: every threshold stops at the same cost, so the
        # curve is a single point and its area is just that pass rate.
        area = _mean([p.agg_pass1 for p in points])
    return EfficiencyCurve(policy_family=policy_family, points=tuple(points), auc=area)


def filter_solvable(
    traces: Sequence[ReasoningTrace], threshold: float = 0.8
) -> list[ReasoningTrace]:
    """Keep traces whose full reasoning chain reaches a final pass rate."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold!r}")
    kept = []
    for trace in traces:
        if pass1_at(trace, len(trace.lines) - 1) >= threshold:
            kept.append(trace)
    return kept


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def _curve_to_obj(curve: EfficiencyCurve) -> dict:
    return {
        "policy_family": curve.policy_family,
        "auc": curve.auc,
        "points": [
            {
                "threshold": p.threshold,
                "mean_total_tokens": p.mean_total_tokens,
                "agg_pass1": p.agg_pass1,
            }
            for p in curve.points
        ],
    }


def curve_from_obj(obj: dict) -> EfficiencyCurve:
    points = tuple(
        CurvePoint(
            threshold=str(p["threshold"]),
            mean_total_tokens=float(p["mean_total_tokens"]),
            agg_pass1=float(p["agg_pass1"]),
        )
        for p in obj["points"]
    )
    return EfficiencyCurve(
        policy_family=str(obj["policy_family"]), points=points, auc=float(obj["auc"])
    )


def emit_report(curves: Sequence[EfficiencyCurve], format: str = "json") -> bytes:
    """Render curves to a deterministic document; same curves, same bytes."""
    ordered = sorted(enumerate(curves), key=lambda t: (t[1].policy_family, t[0]))
    if format == "json":
        doc = {"curves": [_curve_to_obj(c) for _, c in ordered]}
        return (json.dumps(doc, ensure_ascii=False, separators=(",", ":")) + "\n").encode()
    if format == "csv":
        rows = ["policy_family,threshold,mean_total_tokens,agg_pass1,auc"]
        for _, curve in ordered:
            for p in curve.points:
                rows.append(
                    f"{_csv_cell(curve.policy_family)},{_csv_cell(p.threshold)},"
                    f"{p.mean_total_tokens!r},{p.agg_pass1!r},{curve.auc!r}"
                )
        return ("\n".join(rows) + "\n").encode()
    raise ValueError(f"unknown report format {format!r}")


def _csv_cell(value: str) -> str:
    if any(c in value for c in ",\"\n"):
        return '"' + value.replace('"', '""') + '"'
    return value


def parse_report(data: bytes | str) -> list[EfficiencyCurve]:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    doc = json.loads(data)
    return [curve_from_obj(c) for c in doc["curves"]]
