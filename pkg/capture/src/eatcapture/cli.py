"""Command-line interface for capturing and re-probing reasoning traces.

Exit codes: 0 success, 2 bad usage/configuration, 3 capture or data error.
"""

from __future__ import annotations

import argparse
import shlex
import subprocess
import sys

from .capture import (
    DEFAULT_PROBE_PREFIX,
    CaptureConfig,
    CaptureError,
    capture_trace,
    dump_jsonl,
    load_jsonl,
    recompute_probes,
)
from .model import LanguageModel, ToyReasoningModel


class UsageError(Exception):
    """Bad flags or option values."""


def build_model(spec: str) -> LanguageModel:
    """Instantiate a model from a spec string.

    * ``toy`` or ``toy:key=value,...`` — the built-in deterministic model
      (keys: answer, n_lines, seed, model_id, think_boost, boost_per_line,
      answer_boost, noise_scale).
    * ``hf:NAME`` — a Hugging Face causal LM (requires torch+transformers).
    """
    if spec == "toy" or spec.startswith("toy:"):
        kwargs: dict[str, object] = {}
        if spec.startswith("toy:"):
            for part in spec[len("toy:"):].split(","):
                if not part:
                    continue
                if "=" not in part:
                    raise UsageError(f"bad model option {part!r}: expected key=value")
                key, value = part.split("=", 1)
                kwargs[key] = value
        try:
            return ToyReasoningModel(**_coerce_toy_kwargs(kwargs))
        except TypeError as e:
            raise UsageError(f"bad toy model options: {e}") from e
    if spec.startswith("hf:"):
        try:
            from .hf import TransformersBackend
        except ImportError as e:
            raise UsageError(
                "hf: models need the optional [hf] extra (torch + transformers)"
            ) from e
        return TransformersBackend.from_pretrained(spec[len("hf:"):])
    raise UsageError(f"unknown model spec {spec!r}: expected 'toy[:opts]' or 'hf:NAME'")


def _coerce_toy_kwargs(kwargs: dict[str, object]) -> dict[str, object]:
    out: dict[str, object] = {}
    for key, value in kwargs.items():
        if key in ("n_lines", "seed"):
            out[key] = int(str(value))
        elif key in ("think_boost", "boost_per_line", "answer_boost", "noise_scale"):
            out[key] = float(str(value))
        else:
            out[key] = value
    return out


def _command_verifier(command: str):
    argv = shlex.split(command)
    if not argv:
        raise UsageError("verifier command must be non-empty")

    def verify(extracted: str, gold: str) -> bool:
        proc = subprocess.run(argv + [extracted, gold], capture_output=True)
        return proc.returncode == 0

    return verify


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eatcapture",
        description="Capture reasoning traces with exact per-line probe entropies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    cap = sub.add_parser("capture", help="generate traces and write trace JSONL")
    cap.add_argument("--model", required=True, help="reasoning model spec (toy[:opts] | hf:NAME)")
    cap.add_argument("--probe-model", help="separate model spec for proxy probes")
    src = cap.add_mutually_exclusive_group(required=True)
    src.add_argument("--questions", help="JSONL of {question_id, question, gold_answer}")
    src.add_argument("--question", help="single question text")
    cap.add_argument("--question-id", default="q-0", help="id for --question (default q-0)")
    cap.add_argument("--gold", default="", help="gold answer for --question")
    cap.add_argument("--out", required=True, help="output trace JSONL path")
    cap.add_argument("--rollouts", type=int, default=4,
                     help="answer samples K per probed line (0 disables grading)")
    cap.add_argument("--temperature", type=float, default=0.6)
    cap.add_argument("--top-p", type=float, default=0.95)
    cap.add_argument("--probe-schedule", default="line",
                     help="'line' (every line) or 'tokens:S' (every S tokens)")
    cap.add_argument("--variants", default="eat",
                     help="comma-separated probe variants "
                          "(eat, eat_prefix, entropy_after_newline)")
    cap.add_argument("--prefix", default=DEFAULT_PROBE_PREFIX,
                     help="answer prefix appended by the eat_prefix variant")
    cap.add_argument("--max-lines", type=int, default=64)
    cap.add_argument("--max-line-tokens", type=int, default=256)
    cap.add_argument("--answer-max-tokens", type=int, default=128)
    cap.add_argument("--seed", type=int, default=0)
    cap.add_argument("--dataset", default="local-capture")
    cap.add_argument("--dump-logits", help="also write raw probe logits to this JSONL")
    cap.add_argument("--verifier-command",
                     help="external grader: run as CMD <extracted> <gold>, exit 0 = correct")
    cap.set_defaults(func=cmd_capture)

    rec = sub.add_parser("recompute", help="add probe entries to existing traces")
    rec.add_argument("--traces", required=True, help="input trace JSONL")
    rec.add_argument("--model", required=True, help="probe model spec")
    rec.add_argument("--variants", default="eat")
    rec.add_argument("--prefix", default=DEFAULT_PROBE_PREFIX)
    rec.add_argument("--out", required=True, help="output trace JSONL path")
    rec.set_defaults(func=cmd_recompute)
    return parser


def _load_questions(args: argparse.Namespace) -> list[tuple[str, str, str]]:
    if args.question is not None:
        return [(args.question_id, args.question, args.gold)]
    rows = load_jsonl(args.questions)
    out = []
    for i, row in enumerate(rows):
        if not isinstance(row, dict) or "question_id" not in row or "question" not in row:
            raise CaptureError(
                f"{args.questions} record {i}: need question_id and question fields")
        out.append((str(row["question_id"]), str(row["question"]),
                    str(row.get("gold_answer", ""))))
    return out


def cmd_capture(args: argparse.Namespace) -> int:
    try:
        config = _config_from_args(args)
    except CaptureError as e:
        raise UsageError(str(e)) from e
    model = build_model(args.model)
    probe_model = build_model(args.probe_model) if args.probe_model else None
    sink: list[dict] | None = [] if args.dump_logits else None

    traces = []
    for question_id, question, gold in _load_questions(args):
        traces.append(capture_trace(
            question_id, question, gold, model,
            config=config, probe_model=probe_model, logit_sink=sink))
        print(f"captured {question_id}: {len(traces[-1]['lines'])} line(s)")
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(dump_jsonl(traces))
    if sink is not None:
        with open(args.dump_logits, "w", encoding="utf-8") as f:
            f.write(dump_jsonl(sink))
    print(f"wrote {len(traces)} trace(s) to {args.out}")
    return 0


def _config_from_args(args: argparse.Namespace) -> CaptureConfig:
    return CaptureConfig(
        temperature=args.temperature,
        top_p=args.top_p,
        rollouts=args.rollouts,
        probe_schedule=args.probe_schedule,
        variants=tuple(v for v in args.variants.split(",") if v),
        prefix=args.prefix,
        max_lines=args.max_lines,
        max_line_tokens=args.max_line_tokens,
        answer_max_tokens=args.answer_max_tokens,
        seed=args.seed,
        dataset=args.dataset,
        verifier=_command_verifier(args.verifier_command)
        if args.verifier_command else None,
        verifier_label=args.verifier_command or "normalized-string-match",
    )


def cmd_recompute(args: argparse.Namespace) -> int:
    model = build_model(args.model)
    variants = tuple(v for v in args.variants.split(",") if v)
    objs = load_jsonl(args.traces)
    out = [recompute_probes(o, model, variants, args.prefix) for o in objs]
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(dump_jsonl(out))
    print(f"re-probed {len(out)} trace(s) under {model.model_id} -> {args.out}")
    return 0


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CaptureError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


def main() -> None:
    raise SystemExit(run_cli())


if __name__ == "__main__":
    main()
