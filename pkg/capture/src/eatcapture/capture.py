"""Trace capture and probe recomputation against local models.

Produces the line-oriented reasoning-trace JSONL that the replay toolkit
consumes (schema version 1): think-block lines with per-line probe
entropies, optional answer rollouts with correctness labels, and enough
metadata to audit how each number was produced.  All entropies written
here are exact full-vocabulary values computed from raw logits, never
top-k bounds.

The two packages share only the file format: this module never imports
the replay toolkit, and the tests validate captured files through its
command-line interface instead.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import (
    EOS_CHAR,
    THINK_CLOSE,
    THINK_OPEN,
    LanguageModel,
    entropy_from_logits,
    sample_token,
)

SCHEMA_VERSION = 1
PARAGRAPH_SEP = "\n\n"

VARIANT_EAT = "eat"
VARIANT_EAT_PREFIX = "eat_prefix"
VARIANT_AFTER_NEWLINE = "entropy_after_newline"
KNOWN_VARIANTS = (VARIANT_EAT, VARIANT_EAT_PREFIX, VARIANT_AFTER_NEWLINE)

DEFAULT_PROBE_PREFIX = "Final answer: "
DEFAULT_ANSWER_PREFIX = "Final answer:\n"
STRING_MATCH_LABEL = "normalized-string-match"


class CaptureError(Exception):
    """Capture or recomputation could not produce a valid trace."""


# ---------------------------------------------------------------------------
# answers
# ---------------------------------------------------------------------------


def extract_boxed(text: str) -> str | None:
    """Content of the last \\boxed{...} group, brace-aware, or None."""
    start = text.rfind("\\boxed{")
    if start < 0:
        return None
    depth = 0
    for i in range(start + len("\\boxed{") - 1, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return text[start + len("\\boxed{"): i]
    return text[start + len("\\boxed{"):]


def normalize_answer(text: str) -> str:
    boxed = extract_boxed(text)
    return (boxed if boxed is not None else text).strip()


# ---------------------------------------------------------------------------
# probe contexts
# ---------------------------------------------------------------------------


def variant_key(variant: str, prefix: str = DEFAULT_PROBE_PREFIX) -> str:
    if variant == VARIANT_EAT_PREFIX:
        return f"{VARIANT_EAT_PREFIX}:{prefix}"
    return variant


def render_probe_text(
    question: str, lines: Sequence[str], variant: str, prefix: str = DEFAULT_PROBE_PREFIX
) -> str:
    """The exact text whose next-token distribution the probe measures."""
    if variant not in KNOWN_VARIANTS:
        raise CaptureError(f"unknown probe variant {variant!r}")
    body = question + THINK_OPEN + "".join(lines)
    if variant == VARIANT_EAT:
        return body + THINK_CLOSE + "\n"
    if variant == VARIANT_EAT_PREFIX:
        return body + THINK_CLOSE + "\n" + prefix
    return body + PARAGRAPH_SEP


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CaptureConfig:
    """Knobs for one capture run; models are passed separately."""

    temperature: float = 0.6
    top_p: float = 0.95
    rollouts: int = 4
    probe_schedule: str = "line"
    variants: tuple[str, ...] = (VARIANT_EAT,)
    prefix: str = DEFAULT_PROBE_PREFIX
    answer_prefix: str = DEFAULT_ANSWER_PREFIX
    max_lines: int = 64
    max_line_tokens: int = 256
    answer_max_tokens: int = 128
    seed: int = 0
    dataset: str = "local-capture"
    verifier: Callable[[str, str], bool] | None = None
    verifier_label: str = STRING_MATCH_LABEL

    def __post_init__(self) -> None:
        if self.temperature < 0.0:
            raise CaptureError("temperature must be >= 0")
        if not 0.0 < self.top_p <= 1.0:
            raise CaptureError("top_p must be in (0, 1]")
        if self.rollouts < 0:
            raise CaptureError("rollout count must be >= 0")
        if self.max_lines < 1 or self.max_line_tokens < 1:
            raise CaptureError("line limits must be >= 1")
        self.schedule_block()  # validate eagerly
        if not self.variants:
            raise CaptureError("at least one probe variant is required")
        for v in self.variants:
            if v not in KNOWN_VARIANTS:
                raise CaptureError(
                    f"unknown probe variant {v!r}; expected one of {KNOWN_VARIANTS}"
                )

    def schedule_block(self) -> int | None:
        """None for per-line probing, or the token stride S."""
        if self.probe_schedule == "line":
            return None
        if self.probe_schedule.startswith("tokens:"):
            try:
                block = int(self.probe_schedule.split(":", 1)[1])
            except ValueError:
                block = 0
            if block >= 1:
                return block
        raise CaptureError(
            f"bad probe schedule {self.probe_schedule!r}: expected 'line' or 'tokens:S'"
        )


def _stable_rng(*parts: object) -> np.random.Generator:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def _string_match(extracted: str, gold: str) -> bool:
    return normalize_answer(extracted) == normalize_answer(gold)


# ---------------------------------------------------------------------------
# capture
# ---------------------------------------------------------------------------


def _encode(model: LanguageModel, text: str, where: str) -> list[int]:
    try:
        return list(model.encode(text))
    except ValueError as e:
        raise CaptureError(f"{where}: {model.model_id} cannot tokenize: {e}") from e


def _probe_line(
    question: str,
    lines: Sequence[str],
    models: Sequence[LanguageModel],
    config: CaptureConfig,
    where: str,
) -> tuple[dict[str, dict[str, float]], list[dict]]:
    """Exact entropies for every (model, variant), plus raw-logit dump rows."""
    probes: dict[str, dict[str, float]] = {}
    dump_rows: list[dict] = []
    for model in models:
        for variant in config.variants:
            text = render_probe_text(question, lines, variant, config.prefix)
            ids = _encode(model, text, where)
            logits = np.asarray(model.next_token_logits(ids), dtype=np.float64)
            value = entropy_from_logits(logits)
            key = variant_key(variant, config.prefix)
            probes.setdefault(model.model_id, {})[key] = value
            dump_rows.append({
                "model_id": model.model_id,
                "variant": key,
                "value": value,
                "logits": logits.tolist(),
            })
    return probes, dump_rows


def _rollout(
    model: LanguageModel,
    prefix_ids: list[int],
    rng: np.random.Generator,
    config: CaptureConfig,
) -> tuple[str, int]:
    ids = list(prefix_ids)
    out: list[int] = []
    for _ in range(config.answer_max_tokens):
        logits = model.next_token_logits(ids)
        tid = sample_token(logits, rng, config.temperature, config.top_p)
        if tid == model.eos_id:
            break
        ids.append(tid)
        out.append(tid)
    return model.decode(out).replace(EOS_CHAR, ""), len(out)


def _sample_rollouts(
    question_id: str,
    question: str,
    gold_answer: str,
    lines: Sequence[str],
    line_index: int,
    model: LanguageModel,
    config: CaptureConfig,
) -> tuple[list[dict], float]:
    verify = config.verifier if config.verifier is not None else _string_match
    prefix = question + THINK_OPEN + "".join(lines) + THINK_CLOSE + config.answer_prefix
    prefix_ids = _encode(model, prefix, f"line {line_index} rollouts")
    rollouts = []
    correct_n = 0
    for j in range(config.rollouts):
        rng = _stable_rng("rollout", config.seed, question_id, line_index, j)
        text, n_tokens = _rollout(model, prefix_ids, rng, config)
        extracted = normalize_answer(text)
        correct = bool(verify(extracted, gold_answer))
        correct_n += correct
        rollouts.append({
            "answer_text": text,
            "extracted_answer": extracted,
            "correct": correct,
            "token_count": n_tokens,
        })
    return rollouts, correct_n / config.rollouts


def capture_trace(
    question_id: str,
    question: str,
    gold_answer: str,
    model: LanguageModel,
    config: CaptureConfig = CaptureConfig(),
    probe_model: LanguageModel | None = None,
    logit_sink: list[dict] | None = None,
) -> dict:
    """Generate one reasoning chain and return its trace object.

    The chain is sampled line by line; at each schedule point every
    configured probe variant is measured exactly, under the reasoning
    model's id and, in proxy mode, under the probe model's id as well.
    When logit_sink is given, every probe's raw logit vector is appended
    to it so stored entropies can be re-derived independently.
    """
    if not question:
        raise CaptureError("question must be non-empty")
    if config.rollouts > 0 and not gold_answer:
        raise CaptureError("a gold answer is required when rollouts are requested")

    probe_models = [model] if probe_model is None else [model, probe_model]
    block = config.schedule_block()
    rng = _stable_rng("reason", config.seed, question_id)
    ids = _encode(model, question + THINK_OPEN, "prompt")

    line_records: list[dict] = []
    line_texts: list[str] = []
    held: tuple[dict, list[dict]] | None = None  # pending token-scheduled probe
    line_text = ""
    line_tokens = 0
    total_tokens = 0
    ended_with_end_think = False

    def close_line(text: str, token_count: int) -> None:
        nonlocal held
        index = len(line_records)
        line_texts.append(text)
        where = f"line {index}"
        if block is None:
            probes, dump_rows = _probe_line(
                question, line_texts, probe_models, config, where)
        elif held is not None:
            probes, dump_rows = held
            held = None
        else:
            probes, dump_rows = {}, []
        if logit_sink is not None:
            for row in dump_rows:
                logit_sink.append({
                    "question_id": question_id, "line_index": index, **row})
        record: dict = {
            "index": index,
            "text": text,
            "token_count": token_count,
            "probes": probes,
        }
        if config.rollouts > 0:
            rollouts, pass1 = _sample_rollouts(
                question_id, question, gold_answer, line_texts, index, model, config)
            record["rollouts"] = rollouts
            record["pass1"] = pass1
        line_records.append(record)

    while len(line_records) < config.max_lines:
        logits = model.next_token_logits(ids)
        tid = sample_token(logits, rng, config.temperature, config.top_p)
        if tid == model.eos_id:
            # Reasoning ended without an explicit close marker: the model is
            # done thinking, which downstream treats the same as a close.
            ended_with_end_think = True
            break
        ids.append(tid)
        line_text += model.decode([tid])
        line_tokens += 1
        total_tokens += 1
        if block is not None and total_tokens % block == 0:
            held = _probe_line(
                question, line_texts + [line_text], probe_models, config,
                f"line {len(line_records)}")
        if line_text.endswith(THINK_CLOSE):
            content = line_text[: -len(THINK_CLOSE)]
            if content:
                close_line(content, line_tokens)
            line_text = ""
            ended_with_end_think = True
            break
        if line_text.endswith(PARAGRAPH_SEP) or line_tokens >= config.max_line_tokens:
            close_line(line_text, line_tokens)
            line_text = ""
            line_tokens = 0
    if line_text:
        # Text in flight when generation stopped is still paid-for reasoning.
        close_line(line_text, line_tokens)
    if not line_records:
        raise CaptureError(f"{question_id}: model produced no reasoning text")

    meta = {
        "producer": "eatcapture",
        "exactness": "exact",
        "probe_schedule": config.probe_schedule,
        "verifier": config.verifier_label if config.rollouts > 0 else "",
    }
    if gold_answer:
        meta["gold_answer"] = gold_answer
    if probe_model is not None:
        meta["probe_model_id"] = probe_model.model_id
    return {
        "schema_version": SCHEMA_VERSION,
        "question_id": question_id,
        "dataset": config.dataset,
        "question": question,
        "reasoning_model_id": model.model_id,
        "decoding": {"temperature": config.temperature, "top_p": config.top_p},
        "ended_with_end_think": ended_with_end_think,
        "lines": line_records,
        "meta": meta,
    }


# ---------------------------------------------------------------------------
# recomputation over existing traces
# ---------------------------------------------------------------------------


def recompute_probes(
    trace_obj: dict,
    model: LanguageModel,
    variants: Sequence[str] = (VARIANT_EAT,),
    prefix: str = DEFAULT_PROBE_PREFIX,
) -> dict:
    """Add exact probe entries under model.model_id; touch nothing else.

    This is how proxy-model probe series are attached to traces captured
    from a different (possibly black-box) reasoning model.  Existing probe
    keys other than the requested (model, variant) pairs are preserved
    bit for bit because the object is only ever extended in place.
    """
    if not isinstance(trace_obj, dict) or "lines" not in trace_obj:
        raise CaptureError("not a trace object: missing lines")
    out = json.loads(json.dumps(trace_obj))
    question = out.get("question")
    if not isinstance(question, str):
        raise CaptureError("not a trace object: missing question text")
    texts: list[str] = []
    for i, line in enumerate(out["lines"]):
        text = line.get("text")
        if not isinstance(text, str) or not text:
            raise CaptureError(f"line {i}: empty or missing text; cannot re-probe")
        texts.append(text)
        probes = line.setdefault("probes", {})
        slot = probes.setdefault(model.model_id, {})
        for variant in variants:
            probe_text = render_probe_text(question, texts, variant, prefix)
            ids = _encode(model, probe_text, f"line {i}")
            value = entropy_from_logits(model.next_token_logits(ids))
            slot[variant_key(variant, prefix)] = value
    return out


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def dump_jsonl(objs: Sequence[dict]) -> str:
    return "".join(
        json.dumps(o, ensure_ascii=False, separators=(",", ":")) + "\n" for o in objs
    )


def load_jsonl(path: str) -> list[dict]:
    try:
        with open(path, encoding="utf-8") as f:
            raw = f.read()
    except OSError as e:
        raise CaptureError(f"{path}: cannot read ({e})") from e
    objs = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            objs.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise CaptureError(f"{path} line {lineno}: invalid JSON: {e.msg}") from e
    if not objs:
        raise CaptureError(f"{path}: no records found")
    return objs


def ema_variance_trajectory(values: Sequence[float], alpha: float = 0.2) -> list[float]:
    """EMA variance after each reading; the settling diagnostic for captures."""
    if not 0.0 < alpha < 1.0:
        raise CaptureError("alpha must be in (0, 1)")
    mean, var = 0.0, 0.0
    out = []
    for x in values:
        mean = (1.0 - alpha) * mean + alpha * x
        d = x - mean
        var = (1.0 - alpha) * var + alpha * (d * d)
        out.append(var)
    return out
