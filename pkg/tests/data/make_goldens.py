"""Regenerate the committed CLI fixtures.

Run from the repository root after an editable install:

    python3 tests/data/make_goldens.py

sample_traces.jsonl holds six mixed-difficulty traces carrying both rollout
pools and stored pass rates, so every policy family can replay the same
file.  Convergence points are staggered; the last trace never converges and
is the one solvable-threshold filters drop.  golden_replay.json pins the
byte-exact output of the replay invocation the CLI regression tests rerun.
"""

import pathlib
import random

from eatstop.cli import run_cli
from eatstop.synthetic import (
    agreement_rollouts,
    settling_stream,
    trace_from_eat_stream,
)
from eatstop.trace import save_traces

HERE = pathlib.Path(__file__).resolve().parent

SETTLES = (4, 7, 10, 13, 16, 40)
N_LINES = 30
POOL_SIZE = 8
TOKENS_PER_LINE = 20


def build_corpus():
    traces = []
    for j, settle in enumerate(SETTLES):
        rng = random.Random(1000 + j)
        values = settling_stream(N_LINES, settle, rng=rng)
        pools = agreement_rollouts(N_LINES, settle, POOL_SIZE, rng=rng)
        # Rollout pools are all-wrong before the settle line and all-gold
        # after it, so the stored pass rates must be exactly 0 then 1.
        pass1 = [1.0 if i >= settle else 0.0 for i in range(N_LINES)]
        traces.append(
            trace_from_eat_stream(
                f"sample-{j:03d}",
                values,
                tokens_per_line=TOKENS_PER_LINE,
                pass1_by_line=pass1,
                rollouts_by_line=pools,
                ended_with_end_think=settle < N_LINES,
            )
        )
    return traces


def main() -> None:
    corpus = HERE / "sample_traces.jsonl"
    save_traces(build_corpus(), str(corpus))
    rc = run_cli(
        [
            "replay",
            "--traces", str(corpus),
            "--policy", "eat",
            "--delta", "1e-3",
            "--alpha", "0.5",
            "--out", str(HERE / "golden_replay.json"),
        ]
    )
    if rc != 0:
        raise SystemExit(f"replay failed with exit code {rc}")


if __name__ == "__main__":
    main()
