"""Next-token entropy primitives and probe-context rendering.

The confidence signal monitored by the stopping machinery is the Shannon
entropy of the model's next-token distribution, measured at deliberately
constructed probe points: the position right after a closed think block
(optionally followed by an answer-eliciting prefix), or right after a
paragraph break inside an open think block.  Entropies are in nats.

Two levels of observability are supported.  When the full distribution is
available the entropy is exact.  When only the top-k log-probabilities are
visible, the entropy of the underlying full distribution is bracketed by a
closed interval: the unseen residual mass contributes least when lumped onto
a single token and most when spread uniformly over all unseen tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
PARAGRAPH_SEP = "\n\n"
DEFAULT_ANSWER_PREFIX = "Final answer: "

# Tolerance for sum(p) == 1 in full distributions.
PROB_SUM_TOL = 1e-9
# Tolerance for negative residual mass in top-k views (float roundoff).
RESIDUAL_TOL = 1e-6

VARIANT_EAT = "eat"
VARIANT_EAT_PREFIX = "eat_prefix"
VARIANT_AFTER_NEWLINE = "entropy_after_newline"

_VARIANT_KINDS = (VARIANT_EAT, VARIANT_EAT_PREFIX, VARIANT_AFTER_NEWLINE)


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenDistribution:
    """A next-token distribution, either fully observed or a top-k view.

    Full mode: ``probs`` holds the whole probability vector and
    ``vocab_size == len(probs)``.  Partial mode: ``topk_logprobs`` holds the
    k largest log-probabilities in non-increasing order and ``vocab_size``
    is the true vocabulary size, so the residual mass over unseen tokens is
    ``1 - sum(exp(topk_logprobs))``.
    """

    vocab_size: int
    probs: tuple[float, ...] | None = None
    topk_logprobs: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if (self.probs is None) == (self.topk_logprobs is None):
            raise ValueError("exactly one of probs / topk_logprobs must be set")
        if self.vocab_size < 1:
            raise ValueError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.probs is not None:
            if len(self.probs) != self.vocab_size:
                raise ValueError(
                    f"full distribution has {len(self.probs)} entries "
                    f"but vocab_size = {self.vocab_size}"
                )
            arr = np.asarray(self.probs, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError("probabilities must be finite")
            if np.any(arr < 0.0):
                raise ValueError("probabilities must be non-negative")
            total = math.fsum(self.probs)
            if abs(total - 1.0) > PROB_SUM_TOL:
                raise ValueError(
                    f"probabilities sum to {total!r}, expected 1 within {PROB_SUM_TOL}"
                )
        else:
            lps = self.topk_logprobs
            assert lps is not None
            if not 1 <= len(lps) <= self.vocab_size:
                raise ValueError(
                    f"top-k size {len(lps)} out of range for vocab_size {self.vocab_size}"
                )
            for lp in lps:
                if not (math.isfinite(lp) or lp == -math.inf):
                    raise ValueError(f"log-probability {lp!r} is not finite")
                if lp > 0.0:
                    raise ValueError(f"log-probability {lp!r} exceeds 0")
            if any(a < b for a, b in zip(lps, lps[1:])):
                raise ValueError("top-k log-probabilities must be non-increasing")
            total = math.fsum(math.exp(lp) for lp in lps)
            if total - 1.0 > RESIDUAL_TOL:
                raise ValueError(
                    f"top-k masses sum to {total!r}, exceeding 1 beyond tolerance"
                )

    @property
    def is_full(self) -> bool:
        return self.probs is not None

    @classmethod
    def from_probs(cls, probs) -> "TokenDistribution":
        seq = tuple(float(p) for p in probs)
        return cls(vocab_size=len(seq), probs=seq)

    @classmethod
    def from_topk(cls, logprobs, vocab_size: int) -> "TokenDistribution":
        # Sort defensively: providers normally return top-k largest-first,
        # but the interval math only needs the multiset.
        seq = tuple(sorted((float(lp) for lp in logprobs), reverse=True))
        return cls(vocab_size=vocab_size, topk_logprobs=seq)


def entropy(dist: TokenDistribution) -> float:
    """Shannon entropy in nats of a fully observed distribution.

    Zero-probability entries contribute nothing (the 0 * ln 0 = 0
    convention).  Partial distributions have no single entropy; use
    entropy_bounds_from_topk for those.
    """
    if not dist.is_full:
        raise ValueError("entropy requires a full distribution; use entropy_bounds_from_topk")
    p = np.asarray(dist.probs, dtype=np.float64)
    nz = p[p > 0.0]
    h = -math.fsum((nz * np.log(nz)).tolist())
    return h + 0.0  # normalize -0.0


def entropy_bounds_from_topk(dist: TokenDistribution) -> tuple[float, float]:
    """Closed interval [lower, upper] containing the full-vocabulary entropy.

    With observed masses p_1..p_k and residual r = 1 - sum(p_i) over
    m = vocab_size - k unseen tokens, the entropy is minimized when r sits
    on one unseen token and maximized when r is spread uniformly:

        lower = -sum(p_i ln p_i) - r ln r
        upper = lower + r ln m

    The interval collapses when r = 0 or m <= 1.
    """
    if dist.is_full:
        raise ValueError("entropy_bounds_from_topk requires a top-k view")
    lps = dist.topk_logprobs
    assert lps is not None
    masses = [math.exp(lp) for lp in lps]
    observed = math.fsum(masses)
    r = 1.0 - observed
    if r < -RESIDUAL_TOL:
        raise ValueError(f"top-k masses exceed 1 (residual {r!r})")
    r = max(r, 0.0)
    m_unseen = dist.vocab_size - len(lps)
    if m_unseen == 0 and r > RESIDUAL_TOL:
        raise ValueError(
            f"top-k covers the whole vocabulary but residual mass is {r!r}"
        )
    h_obs = -math.fsum(p * math.log(p) for p in masses if p > 0.0)
    if r <= 0.0 or m_unseen == 0:
        h_obs += 0.0
        return (h_obs, h_obs)
    lower = h_obs - r * math.log(r)
    upper = lower + r * math.log(m_unseen) if m_unseen > 1 else lower
    return (lower, upper)


def information_gain(baseline_entropy: float, eat_value: float) -> float:
    """Entropy drop captured by conditioning on the reasoning trace.

    Positive when the trace sharpened the answer distribution; negative
    values are meaningful and indicate the trace confused the model.
    """
    if baseline_entropy < 0.0 or eat_value < 0.0:
        raise ValueError("entropies must be non-negative")
    return baseline_entropy - eat_value


# ---------------------------------------------------------------------------
# probe contexts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeVariant:
    """Which probe construction to use when measuring entropy.

    kind is one of:
      - "eat": close the think block and measure right after the newline.
      - "eat_prefix": same, then append an answer-eliciting prefix.
      - "entropy_after_newline": keep the think block open and measure after
        a paragraph break (the prefix field is unused).
    """

    kind: str
    prefix: str = ""

    def __post_init__(self) -> None:
        if self.kind not in _VARIANT_KINDS:
            raise ValueError(f"unknown probe variant kind {self.kind!r}")
        if self.kind == VARIANT_EAT_PREFIX and not self.prefix:
            raise ValueError("eat_prefix variant requires a non-empty prefix")
        if self.kind != VARIANT_EAT_PREFIX and self.prefix:
            raise ValueError(f"{self.kind} variant does not take a prefix")

    @property
    def key(self) -> str:
        """Stable string form used to key probe values in traces."""
        if self.kind == VARIANT_EAT_PREFIX:
            return f"{VARIANT_EAT_PREFIX}:{self.prefix}"
        return self.kind

    @classmethod
    def from_key(cls, key: str) -> "ProbeVariant":
        if key.startswith(VARIANT_EAT_PREFIX + ":"):
            return cls(VARIANT_EAT_PREFIX, key[len(VARIANT_EAT_PREFIX) + 1 :])
        return cls(key)

    @classmethod
    def eat(cls) -> "ProbeVariant":
        return cls(VARIANT_EAT)

    @classmethod
    def eat_prefix(cls, prefix: str = DEFAULT_ANSWER_PREFIX) -> "ProbeVariant":
        return cls(VARIANT_EAT_PREFIX, prefix)

    @classmethod
    def after_newline(cls) -> "ProbeVariant":
        return cls(VARIANT_AFTER_NEWLINE)


EAT = ProbeVariant.eat()
AFTER_NEWLINE = ProbeVariant.after_newline()


@dataclass(frozen=True)
class ProbeContext:
    """Inputs needed to render the text whose next token gets probed."""

    question: str
    lines: tuple[str, ...]
    variant: ProbeVariant

    def __post_init__(self) -> None:
        for i, line in enumerate(self.lines):
            if THINK_CLOSE in line:
                raise ValueError(
                    f"line {i} contains {THINK_CLOSE!r}; the close marker is "
                    "appended by rendering, never stored in lines"
                )
        if self.variant.kind == VARIANT_AFTER_NEWLINE and not self.lines:
            raise ValueError("entropy_after_newline requires at least one line")


def render_probe(ctx: ProbeContext) -> str:
    """Deterministically render the probe text for a context.

    The rendering is injective over (question, lines, variant): the think
    markers delimit the question from the reasoning, and the variant decides
    the suffix after the joined lines.
    """
    body = ctx.question + THINK_OPEN + "".join(ctx.lines)
    kind = ctx.variant.kind
    if kind == VARIANT_EAT:
        return body + THINK_CLOSE + "\n"
    if kind == VARIANT_EAT_PREFIX:
        return body + THINK_CLOSE + "\n" + ctx.variant.prefix
    return body + PARAGRAPH_SEP


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EntropySample:
    """One probe measurement, annotated with where and how it was taken.

    value is the entropy used downstream.  Exact samples leave lower/upper
    unset; samples recovered from a top-k view carry the bounding interval
    and value must lie inside it (the driver records the conservative upper
    bound as the value).
    """

    value: float
    line_index: int
    cumulative_reasoning_tokens: int
    probe_model_id: str
    variant: ProbeVariant
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self) -> None:
        if self.value < 0.0 or not math.isfinite(self.value):
            raise ValueError(f"entropy value must be finite and >= 0, got {self.value!r}")
        if self.line_index < 0:
            raise ValueError("line_index must be >= 0")
        if self.cumulative_reasoning_tokens < 0:
            raise ValueError("cumulative_reasoning_tokens must be >= 0")
        if (self.lower is None) != (self.upper is None):
            raise ValueError("lower and upper must be set together")
        if self.lower is not None and self.upper is not None:
            if not self.lower <= self.value <= self.upper:
                raise ValueError(
                    f"value {self.value!r} outside bounds [{self.lower!r}, {self.upper!r}]"
                )

    @property
    def exact(self) -> bool:
        return self.lower is None
