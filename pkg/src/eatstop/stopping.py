"""Exponentially weighted tracking of the probe stream and stop policies.

The online stopping rule keeps an exponential moving average and variance of
the probe entropies seen so far.  A step with smoothing weight alpha folds a
new reading x into state (mean, var):

    mean' = (1 - alpha) * mean + alpha * x
    var'  = (1 - alpha) * var  + alpha * (x - mean')**2

The squared deviation is taken against the already-updated mean.  Exiting on
low variance is only allowed after a warm-up of ceil(4 / alpha) readings, the
point where the fresh state's zero-initialization bias has mostly decayed.

Three stop policies share one decision shape: the entropy-variance rule, a
fixed token budget, and an answer-agreement rule that exits once K sampled
answers collapse to at most a given number of distinct values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

from .answers import normalize_answer
from .signals import EAT, ProbeVariant

DEFAULT_ALPHA = 0.2
DEFAULT_TOKEN_LIMIT = 10_000


# ---------------------------------------------------------------------------
# EMA state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmaState:
    mean: float
    var: float
    n: int
    alpha: float

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha!r}")
        if self.n < 0:
            raise ValueError("n must be >= 0")
        if self.var < 0.0:
            raise ValueError("var must be >= 0")

    @classmethod
    def fresh(cls, alpha: float) -> "EmaState":
        return cls(mean=0.0, var=0.0, n=0, alpha=alpha)


def ema_update(state: EmaState, x: float) -> EmaState:
    if not math.isfinite(x):
        raise ValueError(f"observation must be finite, got {x!r}")
    a = state.alpha
    mean = (1.0 - a) * state.mean + a * x
    d = x - mean
    var = (1.0 - a) * state.var + a * (d * d)
    return EmaState(mean=mean, var=var, n=state.n + 1, alpha=a)


def warmup_floor(alpha: float) -> int:
    """Minimum number of readings before a variance exit is allowed."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha!r}")
    return math.ceil(4.0 / alpha)


# ---------------------------------------------------------------------------
# decisions
# ---------------------------------------------------------------------------


class ExitReason(str, Enum):
    NONE = "none"
    VARIANCE_BELOW_THRESHOLD = "variance_below_threshold"
    END_THINK_EMITTED = "end_think_emitted"
    TOKEN_LIMIT_REACHED = "token_limit_reached"
    UNIQUE_ANSWERS_AT_THRESHOLD = "unique_answers_at_threshold"


class Verdict(str, Enum):
    CONTINUE = "continue"
    EXIT = "exit"


@dataclass(frozen=True)
class StopDecision:
    verdict: Verdict
    reason: ExitReason

    def __post_init__(self) -> None:
        if (self.verdict is Verdict.EXIT) == (self.reason is ExitReason.NONE):
            raise ValueError("exit decisions carry a reason; continue decisions carry none")

    @property
    def should_exit(self) -> bool:
        return self.verdict is Verdict.EXIT


CONTINUE = StopDecision(Verdict.CONTINUE, ExitReason.NONE)


def _exit(reason: ExitReason) -> StopDecision:
    return StopDecision(Verdict.EXIT, reason)


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EatVariance:
    """Exit when the EMA variance of the probe entropies falls below delta."""

    delta: float
    alpha: float = DEFAULT_ALPHA
    token_limit: int = DEFAULT_TOKEN_LIMIT
    probe_variant: ProbeVariant = EAT
    probe_model_id: str = ""

    def __post_init__(self) -> None:
        if not self.delta > 0.0:
            raise ValueError(f"delta must be > 0, got {self.delta!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha!r}")
        if self.token_limit < 1:
            raise ValueError("token_limit must be >= 1")

    @property
    def warmup(self) -> int:
        return warmup_floor(self.alpha)


@dataclass(frozen=True)
class TokenBudget:
    """Exit once the reasoning token count reaches a fixed budget."""

    token_limit: int = DEFAULT_TOKEN_LIMIT

    def __post_init__(self) -> None:
        if self.token_limit < 1:
            raise ValueError("token_limit must be >= 1")


@dataclass(frozen=True)
class UniqueAnswers:
    """Exit when K sampled answers agree down to <= uniq_threshold values."""

    k: int
    uniq_threshold: int
    token_limit: int = DEFAULT_TOKEN_LIMIT

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 1 <= self.uniq_threshold <= self.k:
            raise ValueError(
                f"uniq_threshold must be in [1, k], got {self.uniq_threshold} with k={self.k}"
            )
        if self.token_limit < 1:
            raise ValueError("token_limit must be >= 1")


StoppingPolicy = Union[EatVariance, TokenBudget, UniqueAnswers]


def decide_eat(
    state: EmaState,
    policy: EatVariance,
    tokens_used: int,
    end_think_seen: bool,
) -> StopDecision:
    """One step of the variance stopping rule.

    Reason priority when several conditions hold at once:
    end_think_emitted > token_limit_reached > variance_below_threshold.
    A variance exit additionally requires the warm-up floor.
    """
    if state.alpha != policy.alpha:
        raise ValueError(
            f"state alpha {state.alpha!r} does not match policy alpha {policy.alpha!r}"
        )
    if end_think_seen:
        return _exit(ExitReason.END_THINK_EMITTED)
    if tokens_used >= policy.token_limit:
        return _exit(ExitReason.TOKEN_LIMIT_REACHED)
    if state.n >= policy.warmup and state.var < policy.delta:
        return _exit(ExitReason.VARIANCE_BELOW_THRESHOLD)
    return CONTINUE


def decide_token(
    tokens_used: int,
    policy: TokenBudget,
    end_think_seen: bool,
) -> StopDecision:
    if end_think_seen:
        return _exit(ExitReason.END_THINK_EMITTED)
    if tokens_used >= policy.token_limit:
        return _exit(ExitReason.TOKEN_LIMIT_REACHED)
    return CONTINUE


def unique_answer_count(answers: Sequence[str]) -> int:
    """Number of distinct answers after normalization."""
    return len({normalize_answer(a) for a in answers})


def decide_uak(
    answers: Sequence[str],
    policy: UniqueAnswers,
    tokens_used: int,
    end_think_seen: bool,
) -> StopDecision:
    if len(answers) != policy.k:
        raise ValueError(f"expected {policy.k} sampled answers, got {len(answers)}")
    if end_think_seen:
        return _exit(ExitReason.END_THINK_EMITTED)
    if tokens_used >= policy.token_limit:
        return _exit(ExitReason.TOKEN_LIMIT_REACHED)
    if unique_answer_count(answers) <= policy.uniq_threshold:
        return _exit(ExitReason.UNIQUE_ANSWERS_AT_THRESHOLD)
    return CONTINUE
