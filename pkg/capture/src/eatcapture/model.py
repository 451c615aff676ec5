"""Local model abstraction and a deterministic toy reasoning model.

A model here is anything that can tokenize text and return full-vocabulary
next-token logits.  Entropies computed from those logits are exact (no
top-k truncation), which is the whole point of capturing locally instead
of through a serving API.

ToyReasoningModel is a self-contained, dependency-free stand-in for a
reasoning-tuned checkpoint: a character-level model that works through a
fixed number of think-block lines, closes the block, and states a boxed
answer.  Its logits are a hash-derived noise floor plus a confidence boost
on the scripted continuation, and the boost grows as reasoning proceeds,
so the next-token entropy after a hypothetical block close falls and
settles the way it does for real models.  Everything is deterministic in
(seed, context), which makes captures reproducible byte for byte.
"""

from __future__ import annotations

import hashlib
import math
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

EOS_CHAR = "\x03"
THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"

# EOS first so it always has id 0.
CHARSET = EOS_CHAR + "\n" + "".join(chr(c) for c in range(0x20, 0x7F))


@runtime_checkable
class LanguageModel(Protocol):
    """Minimal surface a capture run needs from a local model."""

    model_id: str

    @property
    def vocab_size(self) -> int: ...

    @property
    def eos_id(self) -> int: ...

    def encode(self, text: str) -> list[int]: ...

    def decode(self, ids: Sequence[int]) -> str: ...

    def next_token_logits(self, ids: Sequence[int]) -> np.ndarray: ...


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax in float64; temperature 0 collapses to argmax."""
    x = np.asarray(logits, dtype=np.float64)
    if temperature <= 0.0:
        out = np.zeros_like(x)
        out[int(np.argmax(x))] = 1.0
        return out
    x = x / temperature
    x = x - x.max()
    e = np.exp(x)
    return e / e.sum()


def entropy_from_logits(logits: np.ndarray) -> float:
    """Exact Shannon entropy in nats of softmax(logits) at temperature 1."""
    p = softmax(logits)
    nz = p[p > 0.0]
    return -math.fsum((nz * np.log(nz)).tolist()) + 0.0


def sample_token(
    logits: np.ndarray,
    rng: np.random.Generator,
    temperature: float,
    top_p: float,
) -> int:
    """Nucleus sampling: smallest top-p prefix of the sorted distribution."""
    probs = softmax(logits, temperature)
    if temperature <= 0.0:
        return int(np.argmax(probs))
    order = np.argsort(probs)[::-1]
    cum = np.cumsum(probs[order])
    keep = int(np.searchsorted(cum, top_p)) + 1
    kept = order[:keep]
    kept_p = probs[kept]
    kept_p = kept_p / kept_p.sum()
    return int(rng.choice(kept, p=kept_p))


def _align(sub: str, target: str) -> int:
    """Length of the longest prefix of target that suffixes sub.

    Keeps the script on track even when sampling briefly wanders off it.
    """
    for p in range(min(len(sub), len(target)), 0, -1):
        if sub.endswith(target[:p]):
            return p
    return 0


class ToyReasoningModel:
    """Deterministic character-level reasoning model over CHARSET."""

    def __init__(
        self,
        answer: str = "42",
        n_lines: int = 6,
        seed: int = 0,
        model_id: str = "toy-reasoner",
        think_boost: float = 8.0,
        boost_per_line: float = 0.4,
        answer_boost: float = 6.0,
        noise_scale: float = 1.0,
    ) -> None:
        self.answer = str(answer)
        self.n_lines = int(n_lines)
        self.seed = int(seed)
        self.model_id = model_id
        self.think_boost = float(think_boost)
        self.boost_per_line = float(boost_per_line)
        self.answer_boost = float(answer_boost)
        self.noise_scale = float(noise_scale)
        self._index = {c: i for i, c in enumerate(CHARSET)}

    @property
    def vocab_size(self) -> int:
        return len(CHARSET)

    @property
    def eos_id(self) -> int:
        return 0

    def encode(self, text: str) -> list[int]:
        try:
            return [self._index[c] for c in text]
        except KeyError as e:
            raise ValueError(f"character {e.args[0]!r} is not in the vocabulary") from e

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(CHARSET[i] for i in ids)

    def _line_template(self, k: int) -> str:
        return f"step {k}: tighten the estimate and compare.\n\n"

    def _ideal(self, text: str) -> tuple[str, float]:
        """(next scripted character, confidence boost) for a context."""
        think_at = text.rfind(THINK_OPEN)
        body = text[think_at + len(THINK_OPEN):] if think_at >= 0 else text
        close_at = body.rfind(THINK_CLOSE)
        if close_at >= 0:
            goal = f"\\boxed{{{self.answer}}}."
            sub = body[close_at + len(THINK_CLOSE):]
            pos = _align(sub, goal)
            ch = goal[pos] if pos < len(goal) else EOS_CHAR
            # Confidence in the answer grows with how much reasoning preceded
            # the close, so answer-context entropy falls and settles as chains
            # get longer -- the shape the downstream stopping rule watches for.
            lines_done = body[:close_at].count("\n\n")
            return ch, self.answer_boost + self.boost_per_line * lines_done
        lines_done = body.count("\n\n")
        boost = self.think_boost + self.boost_per_line * lines_done
        last_break = body.rfind("\n\n")
        sub = body if last_break < 0 else body[last_break + 2:]
        target = THINK_CLOSE if lines_done >= self.n_lines else self._line_template(lines_done)
        pos = _align(sub, target)
        ch = target[pos] if pos < len(target) else EOS_CHAR
        return ch, boost

    def _noise(self, ids: Sequence[int]) -> np.ndarray:
        tail = bytes(b for i in ids[-24:] for b in int(i).to_bytes(2, "big"))
        digest = hashlib.sha256(self.seed.to_bytes(8, "big", signed=True) + tail).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        return rng.random(self.vocab_size) * self.noise_scale

    def next_token_logits(self, ids: Sequence[int]) -> np.ndarray:
        logits = self._noise(ids)
        ch, boost = self._ideal(self.decode(ids))
        logits[self._index[ch]] += boost
        return logits
