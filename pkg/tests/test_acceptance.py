"""Acceptance gate: one test per shipping criterion, oracle-checked.

Each test prints a single `[acceptance] <name>: PASS` or `FAIL` line (run
pytest with -s to see them live) and enforces its own wall-clock budget.
Oracles live in helpers.py and are written from the definitions, not from
the package internals, so agreement is evidence and not tautology.
"""

from __future__ import annotations

import contextlib
import json
import math
import random
import time

from eatstop.replay import (
    DELTA_GRID_NEG_POW2,
    TOKEN_GRID_DEFAULT,
    FAMILY_EAT,
    FAMILY_TOKEN,
    FAMILY_UNIQUE,
    auc,
    emit_report,
    filter_solvable,
    simulate_policy,
    sweep,
)
from eatstop.signals import (
    TokenDistribution,
    entropy,
    entropy_bounds_from_topk,
)
from eatstop.stopping import (
    EatVariance,
    EmaState,
    ExitReason,
    TokenBudget,
    UniqueAnswers,
    decide_eat,
    decide_uak,
    ema_update,
    unique_answer_count,
    warmup_floor,
)
from eatstop.synthetic import (
    DEMO_ALPHA,
    DEMO_DELTA,
    agreement_corpus,
    demo_corpus,
    settling_stream,
    trace_from_eat_stream,
)
from eatstop.trace import truncate_trace
from eatstop.driver import run_session
from eatstop.client import CompletionsClient, EndpointConfig
from helpers import (
    direct_entropy,
    dyadic_distribution,
    ema_scan,
    first_variance_stop,
    trapezoid_auc,
)
from mockendpoint import ScriptedEndpoint

ALPHAS = (0.05, 0.1, 0.2, 0.4, 0.5)


@contextlib.contextmanager
def criterion(name: str, limit_s: float | None = None):
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        if limit_s is not None:
            assert elapsed < limit_s, (
                f"{name} took {elapsed:.2f}s, budget {limit_s:.0f}s"
            )
    except BaseException:
        print(f"[acceptance] {name}: FAIL", flush=True)
        raise
    print(f"[acceptance] {name}: PASS", flush=True)


# ---------------------------------------------------------------------------
# signal layer
# ---------------------------------------------------------------------------


def test_entropy_against_direct_oracle():
    with criterion("entropy-direct-oracle", limit_s=1.0):
        rng = random.Random(101)
        for _ in range(1000):
            size = rng.randint(2, 1000)
            raw = [rng.random() for _ in range(size)]
            total = math.fsum(raw)
            probs = [p / total for p in raw]
            h = entropy(TokenDistribution.from_probs(probs))
            assert abs(h - direct_entropy(probs)) <= 1e-12
        # Exactness holds wherever 1/|V| is itself representable.
        for k in range(1, 11):
            n = 2 ** k
            uniform = TokenDistribution.from_probs([1.0 / n] * n)
            assert entropy(uniform) == math.log(n)
        for size in (2, 3, 17, 1000):
            one_hot = [0.0] * size
            one_hot[size // 2] = 1.0
            assert entropy(TokenDistribution.from_probs(one_hot)) == 0.0


def test_topk_bounds_contain_true_entropy():
    with criterion("topk-bound-containment", limit_s=5.0):
        rng = random.Random(202)
        for _ in range(1000):
            size = rng.randint(2, 400)
            probs = dyadic_distribution(rng, size)
            true_h = entropy(TokenDistribution.from_probs(probs))
            k = rng.randint(1, size)
            top = sorted(probs, reverse=True)[:k]
            if top[0] <= 0.0:
                continue
            top = [p for p in top if p > 0.0]
            logprobs = [math.log(p) for p in top]
            dist = TokenDistribution.from_topk(logprobs, size)
            lower, upper = entropy_bounds_from_topk(dist)
            assert lower - 1e-12 <= true_h <= upper + 1e-12
        # Zero residual mass collapses the interval in both construction modes.
        dist = TokenDistribution.from_topk([math.log(1.0)], 7)
        lower, upper = entropy_bounds_from_topk(dist)
        assert lower == upper == 0.0
        probs = dyadic_distribution(rng, 16)
        full = sorted((p for p in probs if p > 0.0), reverse=True)
        dist = TokenDistribution.from_topk([math.log(p) for p in full], 16)
        lower, upper = entropy_bounds_from_topk(dist)
        assert lower == upper


# ---------------------------------------------------------------------------
# EMA layer
# ---------------------------------------------------------------------------


def test_ema_matches_independent_recursion():
    with criterion("ema-oracle-equivalence", limit_s=5.0):
        rng = random.Random(303)
        for _ in range(1000):
            alpha = rng.choice(ALPHAS)
            n = rng.randint(1, 500)
            values = [rng.uniform(0.0, 4.0) for _ in range(n)]
            state = EmaState.fresh(alpha)
            for x, (mean, var) in zip(values, ema_scan(values, alpha)):
                state = ema_update(state, x)
                assert abs(state.mean - mean) <= 1e-12
                assert abs(state.var - var) <= 1e-12
                assert state.var >= 0.0
        for c in (1.0, -3.5, 42.0):
            for alpha in ALPHAS:
                state = EmaState.fresh(alpha)
                for n in range(1, 501):
                    state = ema_update(state, c)
                    expect = (1.0 - alpha) ** n * abs(c)
                    assert abs(abs(state.mean - c) - expect) <= 1e-12


def test_stopping_rule_matches_brute_force():
    with criterion("stopping-rule-brute-force", limit_s=5.0):
        rng = random.Random(404)
        for case in range(500):
            alpha = rng.choice(ALPHAS)
            delta = 10.0 ** rng.uniform(-6, 0)
            n = rng.randint(1, 200)
            if case % 2 == 0:
                values = [rng.uniform(0.0, 3.0) for _ in range(n)]
            else:
                settle = rng.randint(0, n)
                values = settling_stream(n, settle, rng=rng)
            expect = first_variance_stop(values, alpha, delta)
            policy = EatVariance(delta=delta, alpha=alpha, token_limit=10 ** 9)
            warmup = warmup_floor(alpha)
            state = EmaState.fresh(alpha)
            got = None
            for i, x in enumerate(values):
                state = ema_update(state, x)
                decision = decide_eat(state, policy, tokens_used=i + 1,
                                      end_think_seen=False)
                if decision.should_exit:
                    assert decision.reason is ExitReason.VARIANCE_BELOW_THRESHOLD
                    assert state.n >= warmup, "variance exit before warmup"
                    got = i
                    break
            assert got == expect


# ---------------------------------------------------------------------------
# replay layer
# ---------------------------------------------------------------------------


def _demo_subset():
    corpus = demo_corpus()
    return corpus[:10] + corpus[50:60]


def test_thresholds_move_stops_monotonically():
    with criterion("threshold-monotonicity", limit_s=10.0):
        deltas = sorted(DELTA_GRID_NEG_POW2)
        assert len(deltas) == 40 and len(TOKEN_GRID_DEFAULT) == 40
        traces = _demo_subset() + agreement_corpus(4)
        for trace in traces:
            stops, tokens = [], []
            for delta in deltas:
                out = simulate_policy(
                    trace, EatVariance(delta=delta, alpha=DEMO_ALPHA,
                                       token_limit=10 ** 9))
                stops.append(out.stop_line)
                tokens.append(out.reasoning_tokens)
            # Larger delta never stops later.
            assert all(a >= b for a, b in zip(stops, stops[1:]))
            assert all(a >= b for a, b in zip(tokens, tokens[1:]))
            budget_tokens = [
                simulate_policy(trace, TokenBudget(token_limit=t)).reasoning_tokens
                for t in TOKEN_GRID_DEFAULT
            ]
            assert all(a <= b for a, b in zip(budget_tokens, budget_tokens[1:]))


def test_replay_is_deterministic_and_causal():
    with criterion("replay-determinism-and-causality", limit_s=10.0):
        demo = _demo_subset()
        agree = agreement_corpus(6)

        def build_report():
            return emit_report(
                [
                    sweep(demo, FAMILY_EAT, [1e-2, 1e-3, 1e-4], alpha=DEMO_ALPHA),
                    sweep(demo, FAMILY_TOKEN, [500, 1000, 2000]),
                    sweep(agree, FAMILY_UNIQUE, [(8, 1), (8, 2)],
                          repeats=8, seed=99),
                ],
                "json",
            )

        assert build_report() == build_report()

        policies = [
            (demo, EatVariance(delta=DEMO_DELTA, alpha=DEMO_ALPHA,
                               token_limit=10 ** 9)),
            (demo, TokenBudget(token_limit=700)),
            (agree, UniqueAnswers(k=8, uniq_threshold=1, token_limit=10 ** 9)),
        ]
        for corpus, policy in policies:
            for trace in corpus:
                full = simulate_policy(trace, policy, seed=31)
                cut = truncate_trace(trace, full.stop_line)
                again = simulate_policy(cut, policy, seed=31)
                assert again.stop_line == full.stop_line
                assert again.exit_reason == full.exit_reason
                assert again.reasoning_tokens == full.reasoning_tokens
                assert again.overhead_tokens == full.overhead_tokens
                assert again.pass1_at_stop == full.pass1_at_stop


def test_auc_against_trapezoid_oracle():
    with criterion("auc-trapezoid-oracle", limit_s=5.0):
        rng = random.Random(505)
        for _ in range(500):
            n = rng.randint(2, 30)
            xs = rng.sample(range(10_000), n)
            pts = [(float(x), rng.random()) for x in xs]
            assert abs(auc(pts) - trapezoid_auc(pts)) <= 1e-12
        for c in (0.0, 0.25, 0.8, 1.0):
            pts = [(float(x), c) for x in (10, 400, 900, 3000)]
            assert auc(pts) == c


def test_agreement_cost_accounting():
    with criterion("agreement-cost-accounting", limit_s=5.0):
        corpus = agreement_corpus(6)
        policy = UniqueAnswers(k=32, uniq_threshold=1, token_limit=10 ** 9)
        for trace in corpus:
            out = simulate_policy(trace, policy, seed=5)
            # k equals the pool size, so the draw is the whole pool and the
            # spend is the plain sum of recorded rollout lengths.
            hand = sum(
                r.token_count
                for line in trace.lines[: out.stop_line + 1]
                for r in line.rollouts
            )
            assert out.overhead_tokens == hand
        rng = random.Random(606)
        pool = [str(v) for v in range(6)] + [f"\\boxed{{{v}}}" for v in range(6)]
        for _ in range(1000):
            k = rng.randint(1, 12)
            answers = [rng.choice(pool) for _ in range(k)]
            distinct = len({a.split("{")[-1].rstrip("}") for a in answers})
            assert unique_answer_count(answers) == distinct
            uniq_threshold = rng.randint(1, k)
            decision = decide_uak(
                answers,
                UniqueAnswers(k=k, uniq_threshold=uniq_threshold,
                              token_limit=10 ** 9),
                tokens_used=1,
                end_think_seen=False,
            )
            assert decision.should_exit == (distinct <= uniq_threshold)


def test_adaptive_policy_beats_best_fixed_budget():
    with criterion("adaptive-savings-demo", limit_s=30.0):
        corpus = demo_corpus()
        assert len(corpus) == 100
        assert not any(t.lines[-1].pass1 < 1.0 for t in corpus)

        eat_curve = sweep(corpus, FAMILY_EAT, [DEMO_DELTA], alpha=DEMO_ALPHA,
                          token_limit=10 ** 9, probe_cost=1)
        eat_point = eat_curve.points[0]
        assert eat_point.agg_pass1 >= 0.99

        token_curve = sweep(corpus, FAMILY_TOKEN, TOKEN_GRID_DEFAULT)
        matched = [p for p in token_curve.points
                   if p.agg_pass1 >= eat_point.agg_pass1]
        assert matched, "no fixed budget reaches the adaptive policy's pass rate"
        best_fixed = min(p.mean_total_tokens for p in matched)
        assert eat_point.mean_total_tokens <= 0.75 * best_fixed, (
            f"adaptive spend {eat_point.mean_total_tokens} vs "
            f"best fixed {best_fixed}"
        )


def test_solvable_filter_boundary():
    with criterion("solvable-filter-boundary", limit_s=5.0):
        finals = (0.0, 0.5, 0.79, 0.8, 0.81, 1.0)
        traces = []
        for i, final in enumerate(finals):
            pass1 = [0.0] * 4 + [final]
            traces.append(trace_from_eat_stream(
                f"mix-{i}", [1.0, 0.9, 0.8, 0.7, 0.6], pass1_by_line=pass1))
        kept = {t.question_id for t in filter_solvable(traces, 0.8)}
        assert kept == {"mix-3", "mix-4", "mix-5"}


# ---------------------------------------------------------------------------
# live driver
# ---------------------------------------------------------------------------


def _live_client(endpoint: ScriptedEndpoint) -> CompletionsClient:
    config = EndpointConfig(
        base_url="http://mock.test/v1",
        model_id="mock-r1",
        supports_full_distribution=True,
    )
    return CompletionsClient(config, transport=endpoint.transport(),
                             retries=1, sleep=lambda s: None)


def test_live_driver_reproduces_every_exit_reason():
    with criterion("live-driver-mock-integration", limit_s=10.0):
        policy = EatVariance(delta=1e-6, alpha=0.5, token_limit=10_000)

        # Certain next token: entropy stream is constant zero, so the EMA
        # oracle puts the variance exit exactly at the warmup line.
        flat = ScriptedEndpoint(lines=lambda i: [f"step {i}", ".\n\n"],
                                probes=lambda i: {"a": 0.0})
        with _live_client(flat) as client:
            result = run_session("live-var", "Q?", policy, client)
        predicted = first_variance_stop([0.0] * 50, 0.5, 1e-6)
        assert result.exit_reason is ExitReason.VARIANCE_BELOW_THRESHOLD
        assert len(result.trace.lines) == predicted + 1 == 8
        replayed = simulate_policy(result.trace, policy)
        assert replayed.stop_line == predicted
        assert replayed.exit_reason is ExitReason.VARIANCE_BELOW_THRESHOLD

        # The reasoning model closes its own think block on the third line.
        uniform = {t: math.log(0.25) for t in "abcd"}

        def closing(i):
            return ["l", ".\n\n"] if i < 2 else ["done.", "</think>", " x"]

        closer = ScriptedEndpoint(lines=closing, probes=lambda i: uniform)
        with _live_client(closer) as client:
            result = run_session("live-end", "Q?", policy, client)
        assert result.exit_reason is ExitReason.END_THINK_EMITTED
        assert len(result.trace.lines) == 3
        assert result.trace.ended_with_end_think
        replayed = simulate_policy(result.trace, policy)
        assert replayed.stop_line == 2
        assert replayed.exit_reason is ExitReason.END_THINK_EMITTED

        # Noisy entropies never settle; the token budget is the backstop.
        tight = EatVariance(delta=1e-6, alpha=0.5, token_limit=60)
        wobble = ScriptedEndpoint(
            lines=lambda i: ["w"] * 19 + [".\n\n"],
            probes=lambda i: {"a": math.log(0.5), "b": math.log(0.5)}
            if i % 2 else {"a": 0.0},
        )
        with _live_client(wobble) as client:
            result = run_session("live-cap", "Q?", tight, client)
        assert result.exit_reason is ExitReason.TOKEN_LIMIT_REACHED
        assert len(result.trace.lines) == 3  # 20-token lines against a 60 cap
        assert result.tokens_used == 60
        replayed = simulate_policy(result.trace, tight)
        assert replayed.stop_line == 2
        assert replayed.exit_reason is ExitReason.TOKEN_LIMIT_REACHED


def test_acceptance_report_is_replayable_end_to_end():
    """Sanity closure: the pieces used above compose through the file layer."""
    with criterion("trace-file-round-trip", limit_s=10.0):
        corpus = _demo_subset()
        from eatstop.trace import dump_traces_jsonl, parse_traces_jsonl

        again = parse_traces_jsonl(dump_traces_jsonl(corpus))
        assert [t.question_id for t in again] == [t.question_id for t in corpus]
        policy = EatVariance(delta=DEMO_DELTA, alpha=DEMO_ALPHA,
                             token_limit=10 ** 9)
        for before, after in zip(corpus, again):
            a = simulate_policy(before, policy)
            b = simulate_policy(after, policy)
            assert (a.stop_line, a.exit_reason, a.total_tokens) == (
                b.stop_line, b.exit_reason, b.total_tokens)
