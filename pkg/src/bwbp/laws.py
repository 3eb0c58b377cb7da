"""Exact finite-support laws on N_0 and N_0^k.

Scalar laws are kept as ``{value: probability}`` dicts for enumeration and as
``(values, probs)`` arrays for sampling. Vector laws are dicts keyed by tuples.
"""

from __future__ import annotations

import math
from collections import defaultdict
from typing import Mapping

import numpy as np

ScalarLaw = dict[int, float]
VectorLaw = dict[tuple[int, ...], float]


def xlogx(x: float) -> float:
    """x*log(x) with 0*log(0) = 0."""
    return 0.0 if x == 0 else x * math.log(x)


def mean(law: Mapping[int, float]) -> float:
    return sum(v * p for v, p in law.items())


def convolve(a: Mapping[int, float], b: Mapping[int, float]) -> ScalarLaw:
    out: dict[int, float] = defaultdict(float)
    for va, pa in a.items():
        for vb, pb in b.items():
            out[va + vb] += pa * pb
    return dict(out)


def power(law: Mapping[int, float], n: int) -> ScalarLaw:
    """Law of the sum of ``n`` iid copies (binary powering)."""
    result: ScalarLaw = {0: 1.0}
    base = dict(law)
    while n:
        if n & 1:
            result = convolve(result, base)
        n >>= 1
        if n:
            base = convolve(base, base)
    return result


def convolve_vec(a: Mapping[tuple, float], b: Mapping[tuple, float]) -> VectorLaw:
    out: dict[tuple, float] = defaultdict(float)
    for xa, pa in a.items():
        for xb, pb in b.items():
            out[tuple(i + j for i, j in zip(xa, xb))] += pa * pb
    return dict(out)


def power_vec(law: Mapping[tuple, float], n: int, k: int) -> VectorLaw:
    result: VectorLaw = {(0,) * k: 1.0}
    base = dict(law)
    while n:
        if n & 1:
            result = convolve_vec(result, base)
        n >>= 1
        if n:
            base = convolve_vec(base, base)
    return result


def total_variation(a: Mapping, b: Mapping) -> float:
    keys = set(a) | set(b)
    return 0.5 * sum(abs(a.get(x, 0.0) - b.get(x, 0.0)) for x in keys)


def max_abs_diff(a: Mapping, b: Mapping) -> float:
    keys = set(a) | set(b)
    return max((abs(a.get(x, 0.0) - b.get(x, 0.0)) for x in keys), default=0.0)


def sample_sums(
    values: np.ndarray, probs: np.ndarray, counts: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Sum of ``counts[i]`` iid draws from a scalar law, for every i.

    Exact: the multiset of outcomes is multinomial, so only category counts
    are drawn.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if len(values) == 1:
        return counts * int(values[0])
    draws = rng.multinomial(counts, probs)
    return draws @ values


def cumulative(probs: np.ndarray) -> np.ndarray:
    c = np.cumsum(probs)
    c[-1] = 1.0
    return c


def draw_index(cum: np.ndarray, rng: np.random.Generator, size=None):
    """Inverse-CDF draw of a category index from cumulative probabilities."""
    if size is None:
        return int(np.searchsorted(cum, rng.random(), side="right"))
    return np.searchsorted(cum, rng.random(size), side="right")
