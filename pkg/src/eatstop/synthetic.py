"""Synthetic trace corpora for tests, demos, and harness calibration.

These builders produce fully valid traces with known structure: the probe
entropy stream oscillates while "reasoning" is still in flux and settles to
a near-constant once the chain has effectively converged, while the pass
rate jumps from a floor to 1.0 at the settling point.  An adaptive stopping
rule should cut each trace soon after its own settling line; a fixed budget
has to pay for the slowest trace everywhere.
"""

from __future__ import annotations

import hashlib
import random
from typing import Sequence

from .trace import (
    SCHEMA_VERSION,
    DecodingConfig,
    LineRecord,
    ReasoningTrace,
    RolloutRecord,
)

DEMO_PROBE_MODEL = "demo-probe"
DEMO_VARIANT_KEY = "eat"
DEMO_ALPHA = 0.5
DEMO_DELTA = 1e-4


def _rng(*parts: object) -> random.Random:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def trace_from_eat_stream(
    question_id: str,
    eat_values: Sequence[float],
    *,
    tokens_per_line: int = 25,
    pass1_by_line: Sequence[float] | None = None,
    rollouts_by_line: Sequence[Sequence[RolloutRecord]] | None = None,
    probe_model_id: str = DEMO_PROBE_MODEL,
    variant_key: str = DEMO_VARIANT_KEY,
    ended_with_end_think: bool = False,
    dataset: str = "synthetic",
    question: str = "What is 6 times 7?",
) -> ReasoningTrace:
    """Build a valid trace whose probe series equals eat_values."""
    if not eat_values:
        raise ValueError("eat_values must be non-empty")
    lines = []
    for i, value in enumerate(eat_values):
        lines.append(
            LineRecord(
                index=i,
                text=f"step {i}: working.\n\n",
                token_count=tokens_per_line,
                probes={(probe_model_id, variant_key): float(value)},
                rollouts=tuple(rollouts_by_line[i]) if rollouts_by_line else None,
                pass1=float(pass1_by_line[i]) if pass1_by_line else None,
            )
        )
    return ReasoningTrace(
        schema_version=SCHEMA_VERSION,
        question_id=question_id,
        dataset=dataset,
        question=question,
        reasoning_model_id="demo-reasoner",
        decoding=DecodingConfig(temperature=0.6, top_p=0.95),
        lines=tuple(lines),
        ended_with_end_think=ended_with_end_think,
        meta={"producer": "eatstop.synthetic"},
    )


def settling_stream(
    n_lines: int,
    settle_line: int,
    *,
    high: float = 2.0,
    swing: float = 0.6,
    low: float = 0.3,
    pre_jitter: float = 0.05,
    post_jitter: float = 0.002,
    rng: random.Random,
) -> list[float]:
    """Oscillate around `high` before settle_line, near-constant `low` after."""
    values = []
    for i in range(n_lines):
        if i < settle_line:
            base = high + (swing if i % 2 == 0 else -swing)
            values.append(base + rng.uniform(-pre_jitter, pre_jitter))
        else:
            values.append(low + rng.uniform(-post_jitter, post_jitter))
    return values


def demo_corpus(
    n_easy: int = 50,
    n_hard: int = 50,
    *,
    seed: int = 7,
    n_lines: int = 120,
    easy_settle: int = 10,
    hard_settle: int = 80,
    tokens_per_line: int = 25,
    pass_floor: float = 0.2,
) -> list[ReasoningTrace]:
    """Mixed-difficulty corpus where per-question adaptivity pays off.

    Every trace is solvable (final pass1 = 1.0).  Easy questions settle at
    easy_settle lines, hard ones at hard_settle, so a fixed token budget
    matching full accuracy must cover hard_settle lines for everyone.
    """
    traces = []
    for kind, count, settle in (("easy", n_easy, easy_settle), ("hard", n_hard, hard_settle)):
        for j in range(count):
            qid = f"demo-{kind}-{j:03d}"
            rng = _rng("demo", seed, qid)
            values = settling_stream(n_lines, settle, rng=rng)
            pass1 = [1.0 if i >= settle else pass_floor for i in range(n_lines)]
            traces.append(
                trace_from_eat_stream(
                    qid,
                    values,
                    tokens_per_line=tokens_per_line,
                    pass1_by_line=pass1,
                )
            )
    return traces


def agreement_rollouts(
    n_lines: int,
    settle_line: int,
    pool_size: int,
    *,
    gold: str = "42",
    rng: random.Random,
) -> list[list[RolloutRecord]]:
    """Per-line rollout pools whose answers converge onto the gold value.

    Before settle_line each pool spreads over several distinct wrong answers;
    from settle_line on every rollout agrees on the gold answer.  Token
    counts are small known integers so cost accounting can be hand-summed.
    """
    pools = []
    for i in range(n_lines):
        pool = []
        for j in range(pool_size):
            if i >= settle_line:
                answer = gold
            else:
                answer = str(int(gold) + 1 + (j % 4))
            pool.append(
                RolloutRecord(
                    answer_text=f"The answer is \\boxed{{{answer}}}",
                    extracted_answer=answer,
                    correct=answer == gold,
                    token_count=rng.randint(5, 12),
                )
            )
        pools.append(pool)
    return pools


def agreement_corpus(
    n_traces: int = 10,
    *,
    seed: int = 11,
    n_lines: int = 30,
    pool_size: int = 32,
    tokens_per_line: int = 20,
) -> list[ReasoningTrace]:
    """Corpus with recorded rollouts for exercising agreement policies."""
    traces = []
    for j in range(n_traces):
        qid = f"agree-{j:03d}"
        rng = _rng("agree", seed, qid)
        settle = 5 + (j % 3) * 7
        values = settling_stream(n_lines, settle, rng=rng)
        pools = agreement_rollouts(n_lines, settle, pool_size, rng=rng)
        traces.append(
            trace_from_eat_stream(
                qid,
                values,
                tokens_per_line=tokens_per_line,
                rollouts_by_line=pools,
            )
        )
    return traces
