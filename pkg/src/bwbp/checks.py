"""Goodness-of-fit helpers shared by experiments and tests."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping

import numpy as np
from scipy import stats

MIN_EXPECTED = 5.0


@dataclass(frozen=True)
class ChiSquare:
    statistic: float
    dof: int
    pvalue: float
    bins: int


def _pool(keys: list, expected: np.ndarray, observed: np.ndarray):
    """Merge every bin with expected count below MIN_EXPECTED into one bin."""
    small = expected < MIN_EXPECTED
    if not small.any():
        return expected, observed
    e = np.append(expected[~small], expected[small].sum())
    o = np.append(observed[~small], observed[small].sum())
    if e[-1] < MIN_EXPECTED and len(e) > 1:
        # fold a still-small pooled bin into the smallest regular bin
        j = int(np.argmin(e[:-1]))
        e[j] += e[-1]
        o[j] += o[-1]
        e, o = e[:-1], o[:-1]
    return e, o


def chi_square_gof(samples: Iterable[Hashable], law: Mapping[Hashable, float]) -> ChiSquare:
    """Pearson test of samples against an exact finite law.

    Outcomes outside the law's support make the test fail outright.
    """
    counts = Counter(samples)
    n = sum(counts.values())
    stray = [k for k in counts if law.get(k, 0.0) <= 0]
    if stray:
        return ChiSquare(float("inf"), 0, 0.0, 0)
    keys = sorted(law, key=repr)
    expected = np.array([law[k] * n for k in keys])
    observed = np.array([counts.get(k, 0) for k in keys], dtype=float)
    expected, observed = _pool(keys, expected, observed)
    if len(expected) < 2:
        return ChiSquare(0.0, 0, 1.0, len(expected))
    expected = expected * observed.sum() / expected.sum()
    stat, p = stats.chisquare(observed, expected)
    return ChiSquare(float(stat), len(expected) - 1, float(p), len(expected))


def chi_square_two_sample(a: Iterable[Hashable], b: Iterable[Hashable]) -> ChiSquare:
    """Homogeneity test of two samples over their joint support."""
    ca, cb = Counter(a), Counter(b)
    keys = sorted(set(ca) | set(cb), key=repr)
    table = np.array([[ca.get(k, 0) for k in keys], [cb.get(k, 0) for k in keys]], dtype=float)
    tot = table.sum(axis=0)
    expected_min = tot * min(table.sum(axis=1)) / table.sum()
    small = expected_min < MIN_EXPECTED
    if small.any():
        table = np.column_stack([table[:, ~small], table[:, small].sum(axis=1)])
        if table[:, -1].sum() * min(table.sum(axis=1)) / table.sum() < MIN_EXPECTED and table.shape[1] > 2:
            table[:, -2] += table[:, -1]
            table = table[:, :-1]
    if table.shape[1] < 2:
        return ChiSquare(0.0, 0, 1.0, table.shape[1])
    stat, p, dof, _ = stats.chi2_contingency(table, correction=False)
    return ChiSquare(float(stat), int(dof), float(p), table.shape[1])
