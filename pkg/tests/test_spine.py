from __future__ import annotations

import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bwbp import fixtures, laws, spine
from bwbp.checks import chi_square_gof
from bwbp.model import ModelSpec, TableKernel, compute_moments
from bwbp.rng import stream
from oracles import spinal_joint_law
from randmodels import table_models

FIXED = [fixtures.m_bin2, fixtures.m_asym]


@pytest.mark.parametrize("make", FIXED)
@pytest.mark.parametrize("z", [1, 2, 3])
def test_step_law_two_routes(make, z):
    spec = make()
    a = spine.spinal_step_law(z, spec)
    b = spine.SpineTables.build(spec).construction_step_law(z)
    c = spinal_joint_law(spec, z)
    assert laws.max_abs_diff(a, b) <= 1e-10
    assert laws.max_abs_diff(a, c) <= 1e-10
    assert sum(a.values()) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(table_models, st.integers(1, 2))
def test_step_law_random_models(spec, z):
    a = spine.spinal_step_law(z, spec)
    b = spine.SpineTables.build(spec).construction_step_law(z)
    assert laws.max_abs_diff(a, b) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(table_models)
def test_joint_law_matches_pk_px_over_gamma(spec):
    tables = spine.SpineTables.build(spec)
    joint = tables.joint_law()
    gamma = compute_moments(spec).gamma
    assert sum(joint.values()) == pytest.approx(1.0, abs=1e-12)
    for (k, x, m), p in joint.items():
        tab = spec.table(k)
        px = tab.probs[tab.vectors.index(x)]
        assert 1 <= m <= sum(x)
        assert p == pytest.approx(spec.cell_law.p(k) * px / gamma, rel=1e-12)


@pytest.mark.parametrize("make", FIXED)
@pytest.mark.parametrize("z", [1, 2])
def test_sampler_matches_step_law(make, z):
    spec = make()
    tables = spine.SpineTables.build(spec)
    rng = stream(5, "test-spine", z)
    draws = []
    for _ in range(20_000):
        k, l, d, imm = spine.sample_spinal_step(z, tables, rng)
        assert imm >= 0
        draws.append((k, l, tuple(int(v) for v in d)))
    gof = chi_square_gof(draws, spine.spinal_step_law(z, spec))
    assert gof.pvalue > 1e-3


def test_spine_process_stays_positive():
    recs = spine.run_spine_batch(fixtures.m_asym(), 30, 15, seed=3)
    for rec in recs:
        assert min(rec.Zspine) >= 1
        # the next spinal count is at least the spinal parasite's own share
        for n in range(15):
            assert rec.Zspine[n + 1] >= rec.immigrants[n] + 1


def test_spine_csv_and_threads():
    outs = []
    for threads in (1, 2):
        fh = io.StringIO()
        spine.write_spines(spine.run_spine_batch(fixtures.m_bin2(), 9, 6, seed=4, threads=threads), fh)
        outs.append(fh.getvalue())
    assert outs[0] == outs[1]
    assert outs[0].splitlines()[0] == "rep,n,That,Uhat,Zspine,immigrants"


def test_zero_parasite_spine_rejected():
    with pytest.raises(spine.SpineError):
        spine.spinal_step_law(0, fixtures.m_asym())


@pytest.mark.parametrize("make", FIXED)
@pytest.mark.parametrize("depth", [1, 2])
def test_sizebiased_tree_law_is_w_times_tree_law(make, depth):
    spec = make()
    gamma = compute_moments(spec).gamma
    sb = spine.sizebiased_tree_law(spec, depth)
    bt = spine.tree_law(spec, depth)
    marg = {}
    for (cfg, _), p in sb.items():
        marg[cfg] = marg.get(cfg, 0.0) + p
    target = {c: spine.config_generation_total(c, depth) / gamma**depth * p for c, p in bt.items()}
    target = {c: p for c, p in target.items() if p > 0}
    assert laws.max_abs_diff(marg, target) <= 1e-10
    # spine label picks a parasite uniformly: P(spine = u | tree) = z_u / Z_n
    for (cfg, lab), p in sb.items():
        z = dict(cfg)[lab]
        assert p == pytest.approx(z / spine.config_generation_total(cfg, depth) * marg[cfg], rel=1e-9)


def test_tree_law_normalized():
    for depth in (1, 2):
        assert sum(spine.tree_law(fixtures.m_bin2(), depth).values()) == pytest.approx(1.0)


def test_sizebiased_tree_sampler():
    spec = fixtures.m_asym()
    tables = spine.SpineTables.build(spec)
    trees = [spine.run_sizebiased_tree(spec, 2, rng=stream(8, "t", r), tables=tables) for r in range(20_000)]
    sb = spine.sizebiased_tree_law(spec, 2)
    marg = {}
    for (cfg, _), p in sb.items():
        marg[cfg] = marg.get(cfg, 0.0) + p
    assert chi_square_gof([t.config() for t in trees], marg).pvalue > 1e-3
    d = trees[0].to_dict()
    json.dumps(d)
    assert d["generations"][0] == {"root": 1}
    assert len(d["spine"]) == 3


def test_tree_truncation_cap():
    t = spine.run_sizebiased_tree(fixtures.m_nondeg(), 20, cap=50, seed=0)
    assert t.status == "Truncated"


def test_tree_law_config_cap():
    with pytest.raises(spine.SpineError, match="configurations"):
        spine.tree_law(fixtures.m_bin2(), 3, max_configs=100)


def test_gamma_zero_rejected():
    spec = ModelSpec.create([(1, 1.0)], {1: TableKernel.build(1, [((0,), 1.0)])})
    with pytest.raises(spine.SpineError):
        spine.SpineTables.build(spec)
