"""Independent oracles shared across test modules.

Everything here is deliberately written from the definitions, without
importing the package internals under test, so agreement is meaningful.
"""

from __future__ import annotations

import math
import random


def direct_entropy(probs) -> float:
    """Plain direct-summation Shannon entropy in nats."""
    total = 0.0
    for p in probs:
        if p > 0.0:
            total += -p * math.log(p)
    return total


def ema_scan(values, alpha):
    """Naive recursion for the mean/variance stream: list of (mean, var)."""
    mean, var = 0.0, 0.0
    out = []
    for x in values:
        mean = (1.0 - alpha) * mean + alpha * x
        var = (1.0 - alpha) * var + alpha * (x - mean) ** 2
        out.append((mean, var))
    return out

def first_variance_stop(values, alpha, delta):
    """Index of the first reading where a variance exit is legal, or None."""
    warmup = math.ceil(4.0 / alpha)
    for i, (_, var) in enumerate(ema_scan(values, alpha)):
        if i + 1 >= warmup and var < delta:
            return i
    return None


def trapezoid_auc(points) -> float:
    """Sorted trapezoidal area over span, folded by hand."""
    pts = sorted((float(x), float(y)) for x, y in points)
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += 0.5 * (y0 + y1) * (x1 - x0)
    return area / (pts[-1][0] - pts[0][0])


def dyadic_distribution(rng: random.Random, size: int, grain: int = 20):
    """Random distribution of multiples of 2**-grain summing to exactly 1.

    Exact float representation keeps truncation-bound comparisons free of
    normalization noise.
    """
    units = 1 << grain
    cuts = sorted(rng.randrange(units + 1) for _ in range(size - 1))
    parts = []
    prev = 0
    for c in cuts:
        parts.append(c - prev)
        prev = c
    parts.append(units - prev)
    return [p / units for p in parts]
