"""Command-line interface.

Subcommands: validate, replay, sweep, live, report.  Exit codes are stable
so scripts can branch on failure class: 0 success, 2 usage errors, 3 trace
or data errors, 4 endpoint errors.  All randomness (rollout subsampling in
replays and sweeps) flows from --seed; equal inputs and seed give
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor

from . import replay as rp
from .client import CompletionsClient, EndpointConfig, EndpointError
from .driver import DriverError, run_session
from .signals import DEFAULT_ANSWER_PREFIX, ProbeVariant
from .stopping import EatVariance, TokenBudget, UniqueAnswers
from .trace import TraceError, dump_traces_jsonl, load_traces

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_ENDPOINT = 4


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_trace_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("--traces", nargs="+", required=True, metavar="PATH",
                   help="trace JSONL file(s) to read")
    p.add_argument("--solvable-threshold", type=float, default=None, metavar="X",
                   help="drop traces whose final-line pass rate is below X "
                        "(questions the model cannot solve even with full reasoning)")


def _add_probe_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--probe-model", default="", metavar="ID",
                   help="probe model id whose recorded entropies to replay "
                        "(default: the single probe series present in the trace)")
    p.add_argument("--variant", default="eat",
                   choices=["eat", "eat_prefix", "entropy_after_newline"],
                   help="probe construction: entropy right after the closed think "
                        "block (eat), after an answer prefix (eat_prefix), or after "
                        "a paragraph break with the block still open")
    p.add_argument("--prefix", default=DEFAULT_ANSWER_PREFIX, metavar="TEXT",
                   help="answer-eliciting prefix for the eat_prefix variant")
    p.add_argument("--probe-cost", type=int, default=1, metavar="N",
                   help="generated tokens charged per probe (default 1)")


def _add_policy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=None, metavar="ALPHA",
                   help="EMA smoothing weight \u03b1 in (0,1); a variance exit "
                        "unlocks after \u23084/\u03b1\u2309 probes (default 0.2)")
    p.add_argument("--delta", type=float, default=None, metavar="DELTA",
                   help="variance threshold \u03b4: exit once the EMA variance of "
                        "the probe entropies falls below \u03b4")
    p.add_argument("--token-limit", type=int, default=None, metavar="T",
                   help="reasoning token budget T; always enforced (default 10000)")
    p.add_argument("--k", type=int, default=None, metavar="K",
                   help="sampled answers per line K for the agreement policy")
    p.add_argument("--uniq-threshold", type=int, default=None, metavar="D",
                   help="distinct-answer threshold \u0394: exit once the K sampled "
                        "answers collapse to at most \u0394 unique values")


def _add_out_flags(p: argparse.ArgumentParser, formats=("json", "csv")) -> None:
    p.add_argument("--out", default="-", metavar="PATH",
                   help="output path, '-' for stdout (default)")
    p.add_argument("--format", default="json", choices=list(formats),
                   help="output format")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="eatstop",
        description="Detect reasoning-chain convergence from answer-entropy probes "
                    "and stop generation early: offline replay over stored traces "
                    "and a live driver for OpenAI-compatible endpoints.",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}

    p = subs.add_parser("validate", help="strictly validate trace JSONL files")
    p.add_argument("paths", nargs="+", metavar="PATH")
    registry["validate"] = p

    p = subs.add_parser("replay", help="replay one stop policy over stored traces")
    _add_trace_input(p)
    p.add_argument("--policy", default="eat", choices=["eat", "token", "unique"],
                   help="stop policy: EMA-variance on probe entropies (eat), fixed "
                        "token budget (token), or answer agreement (unique)")
    _add_policy_flags(p)
    _add_probe_flags(p)
    p.add_argument("--fallback-rollout-tokens", type=int, default=256, metavar="N",
                   help="assumed tokens per rollout when traces lack recorded "
                        "rollout lengths (default 256)")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for rollout subsampling; the only randomness source")
    _add_out_flags(p)
    registry["replay"] = p

    p = subs.add_parser("sweep", help="price accuracy/cost curves over threshold grids")
    _add_trace_input(p)
    p.add_argument("--family", action="append", default=None,
                   choices=["eat", "token", "unique"],
                   help="policy family to sweep; repeat for several curves "
                        "(default: eat)")
    p.add_argument("--delta-grid", default="neg-pow2", metavar="GRID",
                   help="\u03b4 grid: 'neg-pow2' (2^0..2^-39), 'pos-pow2' "
                        "(2^0..2^39), or a comma list of values")
    p.add_argument("--token-grid", default=None, metavar="LIST",
                   help="comma list of budgets T (default 250,500,...,10000)")
    p.add_argument("--uak-grid", default=None, metavar="LIST",
                   help="comma list of K:\u0394 pairs for the agreement family "
                        "(default 8,16,32 crossed with 1,2,3)")
    _add_policy_flags(p)
    _add_probe_flags(p)
    p.add_argument("--fallback-rollout-tokens", type=int, default=256, metavar="N",
                   help="assumed tokens per rollout when lengths are missing")
    p.add_argument("--repeats", type=int, default=64, metavar="N",
                   help="independent subsampling repeats per trace for the "
                        "agreement family (default 64)")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for rollout subsampling; the only randomness source")
    p.add_argument("--parallel", type=int, default=1, metavar="N",
                   help="worker threads across traces (results are order-stable)")
    _add_out_flags(p)
    registry["sweep"] = p

    p = subs.add_parser("live", help="run live early-stopping sessions")
    p.add_argument("--questions", required=True, metavar="PATH",
                   help="JSONL of {question_id, question}")
    p.add_argument("--base-url", required=True, metavar="URL",
                   help="OpenAI-compatible completions base URL, e.g. http://host/v1")
    p.add_argument("--model", required=True, metavar="ID",
                   help="reasoning model id")
    p.add_argument("--api-key-env", default="", metavar="VAR",
                   help="environment variable holding the bearer token")
    p.add_argument("--probe-base-url", default=None, metavar="URL",
                   help="probe endpoint base URL (default: same as --base-url)")
    p.add_argument("--probe-model", default=None, metavar="ID",
                   help="probe model id; may differ from the reasoning model "
                        "(the probe model only scores, it never generates)")
    p.add_argument("--probe-api-key-env", default=None, metavar="VAR",
                   help="bearer-token variable for the probe endpoint")
    p.add_argument("--top-logprobs", type=int, default=20, metavar="N",
                   help="log-probabilities requested per probe (default 20)")
    p.add_argument("--vocab-size", type=int, default=None, metavar="N",
                   help="probe model vocabulary size; required unless the probe "
                        "endpoint returns full distributions")
    p.add_argument("--full-distribution", action="store_true",
                   help="probe endpoint returns the full next-token distribution")
    _add_policy_flags(p)
    p.add_argument("--variant", default="eat",
                   choices=["eat", "eat_prefix", "entropy_after_newline"],
                   help="probe construction to monitor")
    p.add_argument("--prefix", default=DEFAULT_ANSWER_PREFIX, metavar="TEXT",
                   help="answer-eliciting prefix for the eat_prefix variant")
    p.add_argument("--probe-every", default="line", metavar="WHEN",
                   help="probe schedule: 'line' at every paragraph break, or "
                        "'tokens:S' every S generated tokens")
    p.add_argument("--temperature", type=float, default=0.6)
    p.add_argument("--top-p", type=float, default=0.95)
    p.add_argument("--max-line-tokens", type=int, default=512, metavar="N",
                   help="per-line generation cap (default 512)")
    p.add_argument("--answer-max-tokens", type=int, default=1024, metavar="N")
    p.add_argument("--answer-prefix", default="Final answer:\n", metavar="TEXT",
                   help="prefix appended after the closed think block when "
                        "eliciting the final answer")
    p.add_argument("--timeout", type=float, default=60.0, metavar="SEC")
    p.add_argument("--parallel", type=int, default=1, metavar="N",
                   help="concurrent sessions (one in-flight request per session)")
    p.add_argument("--traces-out", default=None, metavar="PATH",
                   help="write emitted traces as JSONL")
    p.add_argument("--answers-out", default=None, metavar="PATH",
                   help="write {question_id, exit_reason, tokens_used, answer_text, "
                        "extracted_answer} as JSONL")
    registry["live"] = p

    p = subs.add_parser("report", help="re-render a sweep report")
    p.add_argument("--in", dest="in_path", required=True, metavar="PATH",
                   help="JSON report produced by sweep")
    _add_out_flags(p)
    registry["report"] = p

    for sub in registry.values():
        sub.add_argument("--config", default=None, metavar="PATH",
                         help="JSON file of flag defaults (dest names as keys); "
                              "explicit command-line flags win")
    return parser, registry


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _write(out: str, data: bytes) -> None:
    if out == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
    else:
        with open(out, "wb") as f:
            f.write(data)


def _load_all_traces(paths, solvable_threshold):
    traces = []
    for path in paths:
        traces.extend(load_traces(path))
    if solvable_threshold is not None:
        traces = rp.filter_solvable(traces, solvable_threshold)
        if not traces:
            raise TraceError("no traces remain after the solvable filter")
    return traces


def _variant_from_args(args) -> ProbeVariant:
    if args.variant == "eat_prefix":
        return ProbeVariant.eat_prefix(args.prefix)
    return ProbeVariant.from_key(args.variant)


def _forbid(args, policy_name: str, **flags) -> None:
    offending = [name for name, value in flags.items() if value is not None]
    if offending:
        raise UsageError(
            f"flag(s) {', '.join('--' + f for f in offending)} do not apply to "
            f"the {policy_name!r} policy"
        )


def _build_policy(args):
    alpha = args.alpha if args.alpha is not None else 0.2
    token_limit = args.token_limit if args.token_limit is not None else 10_000
    if args.policy == "eat":
        _forbid(args, "eat", k=args.k, uniq_threshold=args.uniq_threshold)
        if args.delta is None:
            raise UsageError("the eat policy requires --delta")
        return EatVariance(
            delta=args.delta,
            alpha=alpha,
            token_limit=token_limit,
            probe_variant=_variant_from_args(args),
            probe_model_id=args.probe_model,
        )
    if args.policy == "token":
        _forbid(args, "token", alpha=args.alpha, delta=args.delta,
                k=args.k, uniq_threshold=args.uniq_threshold)
        return TokenBudget(token_limit=token_limit)
    _forbid(args, "unique", alpha=args.alpha, delta=args.delta)
    if args.k is None or args.uniq_threshold is None:
        raise UsageError("the unique policy requires --k and --uniq-threshold")
    return UniqueAnswers(k=args.k, uniq_threshold=args.uniq_threshold,
                         token_limit=token_limit)


def _policy_obj(policy) -> dict:
    if isinstance(policy, EatVariance):
        return {"policy": "eat", "delta": policy.delta, "alpha": policy.alpha,
                "token_limit": policy.token_limit,
                "variant": policy.probe_variant.key,
                "probe_model": policy.probe_model_id}
    if isinstance(policy, TokenBudget):
        return {"policy": "token", "token_limit": policy.token_limit}
    return {"policy": "unique", "k": policy.k, "uniq_threshold": policy.uniq_threshold,
            "token_limit": policy.token_limit}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    failed = False
    for path in args.paths:
        try:
            traces = load_traces(path)
        except TraceError as e:
            print(f"FAIL {path}: {e}", file=sys.stderr)
            failed = True
            continue
        print(f"OK {path}: {len(traces)} trace(s)")
    return EXIT_DATA if failed else EXIT_OK


def cmd_replay(args) -> int:
    policy = _build_policy(args)
    traces = _load_all_traces(args.traces, args.solvable_threshold)
    outcomes = []
    for trace in traces:
        outcomes.append(
            rp.simulate_policy(
                trace,
                policy,
                seed=args.seed,
                probe_cost=args.probe_cost,
                fallback_rollout_tokens=args.fallback_rollout_tokens,
            )
        )
    rows = [
        {
            "question_id": o.question_id,
            "stop_line": o.stop_line,
            "exit_reason": o.exit_reason.value,
            "reasoning_tokens": o.reasoning_tokens,
            "overhead_tokens": o.overhead_tokens,
            "total_tokens": o.total_tokens,
            "pass1_at_stop": o.pass1_at_stop,
        }
        for o in outcomes
    ]
    if args.format == "csv":
        header = list(rows[0].keys()) if rows else []
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_csv(row[h]) for h in header))
        _write(args.out, ("\n".join(lines) + "\n").encode())
        return EXIT_OK
    # Traces captured live may carry no verification data yet; report null then.
    graded = all(o.pass1_at_stop is not None for o in outcomes)
    doc = {
        "policy": _policy_obj(policy),
        "seed": args.seed,
        "outcomes": rows,
        "aggregate": {
            "agg_pass1": rp.aggregate_pass1(outcomes) if graded else None,
            "mean_total_tokens": sum(o.total_tokens for o in outcomes) / len(outcomes),
        },
    }
    _write(args.out, (json.dumps(doc, ensure_ascii=False, separators=(",", ":")) + "\n").encode())
    return EXIT_OK


def _csv(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    text = str(value)
    if any(c in text for c in ",\"\n"):
        return '"' + text.replace('"', '""') + '"'
    return text


def _parse_delta_grid(spec: str):
    if spec == "neg-pow2":
        return rp.DELTA_GRID_NEG_POW2
    if spec == "pos-pow2":
        return rp.DELTA_GRID_POS_POW2
    try:
        return tuple(float(x) for x in spec.split(","))
    except ValueError as e:
        raise UsageError(f"bad --delta-grid {spec!r}: {e}") from e


def _parse_token_grid(spec: str | None):
    if spec is None:
        return rp.TOKEN_GRID_DEFAULT
    try:
        return tuple(int(x) for x in spec.split(","))
    except ValueError as e:
        raise UsageError(f"bad --token-grid {spec!r}: {e}") from e


def _parse_uak_grid(spec: str | None):
    if spec is None:
        return rp.UAK_GRID_DEFAULT
    pairs = []
    try:
        for part in spec.split(","):
            k, d = part.split(":")
            pairs.append((int(k), int(d)))
    except ValueError as e:
        raise UsageError(f"bad --uak-grid {spec!r} (expected K:D pairs): {e}") from e
    return tuple(pairs)


def cmd_sweep(args) -> int:
    families = args.family or ["eat"]
    traces = _load_all_traces(args.traces, args.solvable_threshold)
    alpha = args.alpha if args.alpha is not None else 0.2
    token_limit = args.token_limit if args.token_limit is not None else 10_000
    curves = []
    for family in families:
        if family == "eat":
            curves.append(
                rp.sweep(
                    traces,
                    rp.FAMILY_EAT,
                    _parse_delta_grid(args.delta_grid),
                    alpha=alpha,
                    token_limit=token_limit,
                    probe_variant=_variant_from_args(args),
                    probe_model_id=args.probe_model,
                    probe_cost=args.probe_cost,
                    seed=args.seed,
                    parallel=args.parallel,
                )
            )
        elif family == "token":
            curves.append(
                rp.sweep(
                    traces,
                    rp.FAMILY_TOKEN,
                    _parse_token_grid(args.token_grid),
                    token_limit=token_limit,
                    seed=args.seed,
                    parallel=args.parallel,
                )
            )
        else:
            curves.append(
                rp.sweep(
                    traces,
                    rp.FAMILY_UNIQUE,
                    _parse_uak_grid(args.uak_grid),
                    token_limit=token_limit,
                    fallback_rollout_tokens=args.fallback_rollout_tokens,
                    repeats=args.repeats,
                    seed=args.seed,
                    parallel=args.parallel,
                )
            )
    _write(args.out, rp.emit_report(curves, args.format))
    return EXIT_OK


def _load_questions(path: str) -> list[dict]:
    try:
        with open(path, encoding="utf-8") as f:
            raw = f.read()
    except OSError as e:
        raise TraceError(f"{path}: cannot read ({e})") from e
    questions = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise TraceError(f"{path} line {lineno}: invalid JSON: {e.msg}") from e
        if not isinstance(obj, dict) or "question_id" not in obj or "question" not in obj:
            raise TraceError(
                f"{path} line {lineno}: expected an object with question_id and question"
            )
        questions.append(obj)
    if not questions:
        raise TraceError(f"{path}: no questions found")
    return questions


def cmd_live(args) -> int:
    questions = _load_questions(args.questions)
    if args.delta is None:
        raise UsageError("live sessions require --delta")
    policy = EatVariance(
        delta=args.delta,
        alpha=args.alpha if args.alpha is not None else 0.2,
        token_limit=args.token_limit if args.token_limit is not None else 10_000,
        probe_variant=_variant_from_args(args),
    )
    _forbid(args, "eat", k=args.k, uniq_threshold=args.uniq_threshold)
    reasoning_cfg = EndpointConfig(
        base_url=args.base_url,
        model_id=args.model,
        api_key_env=args.api_key_env,
        request_timeout=args.timeout,
    )
    probe_cfg = EndpointConfig(
        base_url=args.probe_base_url or args.base_url,
        model_id=args.probe_model or args.model,
        api_key_env=args.probe_api_key_env if args.probe_api_key_env is not None
        else args.api_key_env,
        max_top_logprobs=args.top_logprobs,
        supports_full_distribution=args.full_distribution,
        vocab_size=args.vocab_size,
        request_timeout=args.timeout,
    )

    def one(q: dict):
        with CompletionsClient(reasoning_cfg) as reasoning, \
                CompletionsClient(probe_cfg) as probe:
            return run_session(
                str(q["question_id"]),
                str(q["question"]),
                policy,
                reasoning,
                probe,
                temperature=args.temperature,
                top_p=args.top_p,
                max_line_tokens=args.max_line_tokens,
                answer_max_tokens=args.answer_max_tokens,
                answer_prefix=args.answer_prefix,
                probe_schedule=args.probe_every,
            )

    if args.parallel > 1:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(one, questions))
    else:
        results = [one(q) for q in questions]

    traces = [r.trace for r in results if r.trace is not None]
    if args.traces_out:
        with open(args.traces_out, "w", encoding="utf-8") as f:
            f.write(dump_traces_jsonl(traces))
    if args.answers_out:
        with open(args.answers_out, "w", encoding="utf-8") as f:
            for r in results:
                f.write(json.dumps({
                    "question_id": r.question_id,
                    "exit_reason": r.exit_reason.value,
                    "tokens_used": r.tokens_used,
                    "answer_text": r.answer_text,
                    "extracted_answer": r.extracted_answer,
                }, ensure_ascii=False, separators=(",", ":")) + "\n")
    for r in results:
        print(f"{r.question_id}\t{r.exit_reason.value}\t{r.tokens_used}\t{r.extracted_answer}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        with open(args.in_path, "rb") as f:
            curves = rp.parse_report(f.read())
    except OSError as e:
        raise TraceError(f"{args.in_path}: cannot read ({e})") from e
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise TraceError(f"{args.in_path}: not a sweep report: {e}") from e
    _write(args.out, rp.emit_report(curves, args.format))
    return EXIT_OK


_COMMANDS = {
    "validate": cmd_validate,
    "replay": cmd_replay,
    "sweep": cmd_sweep,
    "live": cmd_live,
    "report": cmd_report,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _apply_config(argv: list[str], parser, registry) -> None:
    path = None
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif arg.startswith("--config="):
            path = arg.split("=", 1)[1]
    if path is None:
        return
    try:
        with open(path, encoding="utf-8") as f:
            cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        parser.error(f"cannot load --config {path!r}: {e}")
    if not isinstance(cfg, dict):
        parser.error(f"--config {path!r} must hold a JSON object")
    known: set[str] = set()
    for sub in registry.values():
        dests = {a.dest for a in sub._actions}
        known |= dests
        sub.set_defaults(**{k: v for k, v in cfg.items() if k in dests})
    unknown = sorted(set(cfg) - known)
    if unknown:
        parser.error(f"--config {path!r}: unknown keys {unknown}")


def run_cli(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, registry = build_parser()
    _apply_config(argv, parser, registry)
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TraceError, rp.ReplayError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (EndpointError, DriverError) as e:
        print(f"endpoint error: {e}", file=sys.stderr)
        return EXIT_ENDPOINT
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main() -> int:
    return run_cli()


if __name__ == "__main__":
    sys.exit(main())
