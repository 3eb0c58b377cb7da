from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bwbp import laws
from bwbp.checks import chi_square_gof

small_laws = st.dictionaries(st.integers(0, 5), st.floats(0.01, 1.0), min_size=1, max_size=4).map(
    lambda d: {k: v / sum(d.values()) for k, v in d.items()}
)


def brute_power(law, n):
    out = {}
    for combo in itertools.product(law.items(), repeat=n):
        s = sum(v for v, _ in combo)
        out[s] = out.get(s, 0.0) + float(np.prod([p for _, p in combo]))
    return out


@given(small_laws, st.integers(0, 4))
def test_power_matches_brute_force(law, n):
    assert laws.max_abs_diff(laws.power(law, n), brute_power(law, n) if n else {0: 1.0}) < 1e-12


@given(small_laws, small_laws)
def test_convolution_adds_means(a, b):
    c = laws.convolve(a, b)
    assert sum(c.values()) == pytest.approx(1.0)
    assert laws.mean(c) == pytest.approx(laws.mean(a) + laws.mean(b))


def test_power_vec_componentwise_marginals():
    law = {(1, 0): 0.5, (0, 2): 0.5}
    p3 = laws.power_vec(law, 3, 2)
    first = {}
    for x, p in p3.items():
        first[x[0]] = first.get(x[0], 0.0) + p
    assert laws.max_abs_diff(first, laws.power({1: 0.5, 0: 0.5}, 3)) < 1e-15


def test_xlogx_zero():
    assert laws.xlogx(0) == 0.0
    assert laws.xlogx(np.e) == pytest.approx(np.e)


def test_cumulative_ends_at_one():
    cum = laws.cumulative(np.array([0.1, 0.2, 0.7000000001]))
    assert cum[-1] == 1.0


def test_draw_index_frequencies():
    p = np.array([0.2, 0.5, 0.3])
    rng = np.random.default_rng(3)
    idx = laws.draw_index(laws.cumulative(p), rng, 50_000)
    assert chi_square_gof(idx.tolist(), dict(enumerate(p))).pvalue > 1e-3


def test_sample_sums_law():
    vals, probs = np.array([0, 1, 3]), np.array([0.3, 0.5, 0.2])
    rng = np.random.default_rng(5)
    counts = np.full(40_000, 3)
    s = laws.sample_sums(vals, probs, counts, rng)
    exact = laws.power(dict(zip(vals.tolist(), probs.tolist())), 3)
    assert chi_square_gof(s.tolist(), exact).pvalue > 1e-3


def test_total_variation_bounds():
    assert laws.total_variation({0: 1.0}, {1: 1.0}) == 1.0
    assert laws.total_variation({0: 0.5, 1: 0.5}, {0: 0.5, 1: 0.5}) == 0.0
