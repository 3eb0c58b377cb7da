from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bwbp import analysis, fixtures
from bwbp.model import CellOffspringLaw, ModelSpec, TableKernel, compute_moments
from randmodels import table_models


def direct_env(spec):
    """(weight, mean) pairs straight from the model, without AbpreEnv."""
    nu = spec.cell_law.mean
    out = []
    for k in spec.positive_k:
        for m in spec.kernel(k).means():
            out.append((spec.cell_law.p(k) / nu, m))
    return out


def grid_rho(spec, step=1e-5):
    wm = direct_env(spec)
    th = np.arange(0.0, 1.0 + step / 2, step)
    phi = sum(w * np.where(m > 0, m ** np.maximum(th, 1e-300), 0.0) for w, m in wm)
    return float(phi.min())


@settings(max_examples=80)
@given(table_models)
def test_env_weights_and_mean(spec):
    env = analysis.abpre_env(spec)
    mom = compute_moments(spec)
    assert math.fsum(a.weight for a in env.atoms) == pytest.approx(1.0, abs=1e-12)
    assert math.fsum(a.weight * a.mean for a in env.atoms) == pytest.approx(mom.gamma / mom.nu, rel=1e-12)


@settings(max_examples=80)
@given(table_models)
def test_rho_bounded_by_endpoints(spec):
    env = analysis.abpre_env(spec)
    r = analysis.rho(env)
    mom = compute_moments(spec)
    assert 0 <= r.rho_numeric <= min(1.0, mom.gamma / mom.nu) + 1e-12
    assert 0 <= r.theta_star <= 1


@settings(max_examples=80)
@given(table_models)
def test_rho_closed_form_branches(spec):
    r = analysis.rho(analysis.abpre_env(spec))
    if r.branch in (1, 2):
        assert abs(r.rho_numeric - r.rho_closed_form) <= 1e-9
    else:
        assert r.rho_closed_form is None


@settings(max_examples=30)
@given(table_models)
def test_rho_against_grid(spec):
    r = analysis.rho(analysis.abpre_env(spec))
    # grid can only overestimate the infimum (0^0 = 1 makes theta=0 special)
    assert r.rho_numeric <= grid_rho(spec) + 1e-12
    assert r.rho_numeric >= grid_rho(spec) - 1e-4


def test_fixture_rho_values():
    a = analysis.rho(analysis.abpre_env(fixtures.m_asym()))
    assert (a.branch, a.rho_numeric) == (2, pytest.approx(0.75, abs=1e-12))
    b = analysis.rho(analysis.abpre_env(fixtures.m_bin2()))
    assert (b.branch, b.rho_numeric, b.theta_star) == (1, 1.0, 0.0)
    w = analysis.rho(analysis.abpre_env(fixtures.m_weak()))
    assert w.branch == 3
    assert w.rho_numeric == pytest.approx(0.6527957, abs=1e-6)
    assert w.third_branch_value == pytest.approx(0.88)


def test_weak_rho_closed_oracle():
    # atoms: mean 4 w.p. 1/5, mean 0.1 w.p. 4/5; phi'(t) = 0 solves to
    # 40^t = 4 ln 10 / ln 4
    t = math.log(4 * math.log(10) / math.log(4)) / math.log(40)
    r = analysis.rho(analysis.abpre_env(fixtures.m_weak()))
    assert r.theta_star == pytest.approx(t, abs=1e-6)
    assert r.rho_numeric == pytest.approx(0.2 * 4**t + 0.8 * 0.1**t, abs=1e-12)


def test_golden_section_quadratic():
    x, fx, _ = analysis.golden_section(lambda t: (t - 0.3) ** 2 + 1, 0.0, 1.0)
    assert x == pytest.approx(0.3, abs=1e-6)
    assert fx == pytest.approx(1.0, abs=1e-12)


def test_growth_rate_requires_nu_above_one():
    env = analysis.abpre_env(fixtures.m_sub())
    with pytest.raises(analysis.AnalysisError, match="nu > 1"):
        analysis.growth_rate_T(env, 1.0)
    assert analysis.growth_rate_T(analysis.abpre_env(fixtures.m_asym()), 2.0) == pytest.approx(math.log(1.5))


@pytest.mark.parametrize(
    "make, L, W",
    [
        (fixtures.m_bin2, "DegenerateZero(abpre_condition)", "MeanOne"),
        (fixtures.m_asym, "DegenerateZero(abpre_condition)", "MeanOne"),
        (fixtures.m_sub, "DegenerateZero(nu_le_1)", "MeanZero(drift_nonneg)"),
        (fixtures.m_nondeg, "NondegenerateOnSurv", "MeanOne"),
        (fixtures.m_meanzero, "DegenerateZero(abpre_condition)", "MeanZero(drift_nonneg)"),
    ],
)
def test_fixture_classes(make, L, W):
    spec = make()
    mom, env = compute_moments(spec), analysis.abpre_env(spec)
    assert str(analysis.classify_L(spec, mom, env)) == L
    assert str(analysis.classify_W(mom, env)) == W


def test_meanzero_fixture_drift():
    env = analysis.abpre_env(fixtures.m_meanzero())
    assert analysis.w_drift(env) == pytest.approx(0.320, abs=1e-3)


def test_suggested_single_k_model_is_mean_one():
    ker = TableKernel.build(2, [((2, 2), 0.5), ((0, 0), 0.5)])
    spec = ModelSpec.create([(2, 1.0)], {2: ker})
    W = analysis.classify_W(compute_moments(spec), analysis.abpre_env(spec))
    assert W.label == "MeanOne"
    assert W.drift == pytest.approx(-math.log(2) / 2)


@settings(max_examples=80)
@given(table_models)
def test_immigration_log_mean_two_ways(spec):
    env = analysis.abpre_env(spec)
    c = analysis.abprei_criticality(spec, env)
    assert abs(c.E_log_ghat - c.E_log_ghat_via_env) <= 1e-10
    if c.correspondence_applies:
        assert c.consistent, (c.criticality, c.abpre_subregime)


def test_bin2_outside_correspondence():
    spec = fixtures.m_bin2()
    c = analysis.abprei_criticality(spec, analysis.abpre_env(spec))
    assert (c.criticality, c.abpre_subregime, c.correspondence_applies) == ("Critical", "NonSub", False)


def test_fixture_criticality():
    for make, crit, sub in [
        (fixtures.m_asym, "Subcritical", "StronglySub"),
        (fixtures.m_weak, "Supercritical", "WeaklySub"),
    ]:
        spec = make()
        c = analysis.abprei_criticality(spec, analysis.abpre_env(spec))
        assert (c.criticality, c.abpre_subregime, c.consistent) == (crit, sub, True)


@given(st.floats(4.0, 50.0), st.integers(0, 12))
def test_norming_geometric_above_support(a, n):
    law = CellOffspringLaw.from_pairs([(1, 0.2), (2, 0.3), (4, 0.5)])
    seq = analysis.heyde_seneta_norming(law, a, n)
    for i, c in enumerate(seq.values):
        assert abs(c - a * law.mean**i) <= 1e-12 * c
    assert all(r == pytest.approx(law.mean, rel=1e-15) for r in seq.ratios)


def test_norming_by_hand():
    law = CellOffspringLaw.from_pairs([(2, 0.6), (5, 0.4)])
    seq = analysis.heyde_seneta_norming(law, 3.0, 4)
    # truncated mean is 1.2 until c passes 5, then the full mean 3.2
    expected = [3.0, 3.6, 4.32, 5.184, 5.184 * 3.2]
    assert seq.values == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("pairs, a", [([(1, 0.2), (2, 0.3), (4, 0.5)], 3.0), ([(1, 0.5), (4, 0.5)], 2.0)])
def test_norming_start_too_small(pairs, a):
    with pytest.raises(analysis.AnalysisError, match="a too small"):
        analysis.heyde_seneta_norming(CellOffspringLaw.from_pairs(pairs), a, 3)


def test_report_is_json_serializable():
    for make in fixtures.FIXTURES.values():
        d = analysis.analyze(make()).to_dict()
        json.loads(json.dumps(d, allow_nan=False))


def test_report_notes():
    rep = analysis.analyze(fixtures.m_weak())
    assert rep.rho_branch == 3
    assert any("interior minimum" in n for n in rep.notes)
    assert rep.growth_rate_T == pytest.approx(math.log(5 * rep.rho_numeric))
