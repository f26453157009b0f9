import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ROOT_PROBS, law_graph, law_model, admission_rule
from cstest import (
    AuditConfig, DataError, DecisionRule, ModelError, apply_decision_rule, compute_delta_p, evaluate, fit_scm,
    from_columns, run_cst, run_st, sample_from_scm, wald_interval,
)


def law_table(ugpa, lsat, race, sex=None, y=None):
    cols = {"race": race, "sex": sex if sex is not None else [0] * len(race), "UGPA": ugpa, "LSAT": lsat}
    roles = {"race": "protected", "sex": "protected"}
    if y is not None:
        cols["Y"] = y
        roles["Y"] = "outcome"
    return from_columns(cols, {}, roles)


def test_decision_rule_examples(rule):
    t = law_table([4.0, 3.93, 0.0], [48.0, 46.1, 0.0], [0, 1, 0])
    out = apply_decision_rule(rule, t)
    # 0.6*4 + 0.4*48 = 21.6 > 20.8; 0.6*3.93 + 0.4*46.1 = 20.798; 0
    assert out.column("Y").tolist() == [1, 0, 0]
    assert out.outcome == "Y"
    assert "derived" in out.attribute("Y").note


def test_decision_rule_weak_inequality_and_replacement():
    t = law_table([1.0, 2.0], [0.0, 0.0], [0, 1], y=[1, 1])
    out = apply_decision_rule(DecisionRule({"UGPA": 1.0}, 1.0, strict=False), t)
    assert out.column("Y").tolist() == [1, 1]
    out = apply_decision_rule(DecisionRule({"UGPA": 1.0}, 1.0), t)
    assert out.column("Y").tolist() == [0, 1]
    with pytest.raises(DataError, match="missing attribute"):
        apply_decision_rule(DecisionRule({"GRE": 1.0}, 1.0), t)


def test_delta_p_examples():
    pc, pt, dp = compute_delta_p([0, 0, 0, 1, 1], [1, 1, 1, 1, 0], 0)
    assert (pc, pt) == (0.6, 0.2)
    assert dp == pytest.approx(0.4, abs=1e-15)
    assert compute_delta_p([1, 0, 1], [1, 0, 1])[2] == 0.0
    with pytest.raises(ValueError):
        compute_delta_p([], [1])


def count_oracle(ctrl, test, neg):
    c = 0
    for v in ctrl:
        if v == neg:
            c += 1
    t = 0
    for v in test:
        if v == neg:
            t += 1
    return c / len(ctrl), t / len(test)


def test_delta_p_against_counting_oracle(rng):
    for _ in range(200):
        a = rng.integers(0, 2, rng.integers(1, 60)).tolist()
        b = rng.integers(0, 2, rng.integers(1, 60)).tolist()
        neg = int(rng.integers(0, 2))
        pc, pt, dp = compute_delta_p(a, b, neg)
        opc, opt = count_oracle(a, b, neg)
        assert (pc, pt, dp) == (opc, opt, opc - opt)


def test_wald_interval():
    lo, hi = wald_interval(0.3, 40, 0.3, 70, 0.95)
    assert lo == pytest.approx(-hi, abs=1e-15)
    assert wald_interval(1.0, 10, 0.0, 10) == (1.0, 1.0)
    # z_{0.975} = 1.959964 from a standard normal table
    half = 1.959964 * math.sqrt(0.6 * 0.4 / 100 + 0.2 * 0.8 / 100)
    lo, hi = wald_interval(0.6, 100, 0.2, 100, 0.95)
    assert lo == pytest.approx(0.4 - half, abs=1e-6)
    assert hi == pytest.approx(0.4 + half, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 50), st.integers(1, 50), st.integers(0, 50), st.integers(1, 50),
       st.floats(0.5, 0.999))
def test_wald_contains_estimate(xc, nc, xt, nt, level):
    pc, pt = min(xc, nc) / nc, min(xt, nt) / nt
    lo, hi = wald_interval(pc, nc, pt, nt, level)
    assert lo <= pc - pt <= hi


def test_constructed_extreme_case():
    # rows: complainant (0), identical protected neighbour (1), identical non-protected (2)
    t = law_table([3.0, 3.0, 3.0], [30.0, 30.0, 30.0], [1, 1, 0], y=[0, 0, 1])
    with pytest.warns(UserWarning, match="zero range"):
        rep = run_st(t, AuditConfig("ST", "race", 1))
    c0 = next(c for c in rep.cases if c.complainant_id == 0)
    assert c0.control.member_ids.tolist() == [1]
    assert c0.test.member_ids.tolist() == [2]
    assert (c0.p_c, c0.p_t, c0.delta_p, c0.flagged) == (1.0, 0.0, 1.0, True)
    assert c0.comparator == 2


def test_mirrored_groups_give_zero_delta():
    rng = np.random.default_rng(4)
    m = 30
    x1, x2 = rng.uniform(0, 4, m), rng.uniform(10, 48, m)
    y = rng.integers(0, 2, m)
    # every profile appears twice in each group with the same outcome
    ug = np.tile(x1, 4); ls = np.tile(x2, 4); yy = np.tile(y, 4)
    race = np.repeat([1, 1, 0, 0], m)
    t = law_table(ug, ls, race, y=yy)
    rep = run_st(t, AuditConfig("ST", "race", 1))
    assert rep.flagged_count == 0
    assert all(c.delta_p == 0 for c in rep.cases)


@pytest.fixture(scope="module")
def synthetic():
    m = law_model()
    t = apply_decision_rule(admission_rule(), sample_from_scm(m, 1500, 21, ROOT_PROBS))
    return t, fit_scm(t, law_graph())


def test_group_purity_and_exclusion(synthetic):
    t, m = synthetic
    race = dict(zip(t.row_ids.tolist(), t.column("race").tolist()))
    for method in ("ST", "CST"):
        rep = evaluate(t, AuditConfig(method, "race", 20), model=m)[20]
        assert rep.total == int(t.column("race").sum())
        for c in rep.cases:
            assert all(race[i] == 1 for i in c.control.member_ids.tolist())
            assert all(race[i] == 0 for i in c.test.member_ids.tolist())
            assert c.complainant_id not in c.control.member_ids.tolist()
            assert c.delta_p == c.p_c - c.p_t
            assert c.flagged == (c.delta_p > 0)
            assert -1 <= c.delta_p <= 1
            assert c.control.size == c.test.size == 20


def test_cst_include_centers_adds_complainant(synthetic):
    t, m = synthetic
    rep = run_cst(t, AuditConfig("CST", "race", 5, include_centers=True), None, m)
    for c in rep.cases:
        assert c.control.member_ids[0] == c.complainant_id
        assert c.control.distances[0] == 0.0


def test_st_forces_centers_off():
    with pytest.warns(UserWarning):
        cfg = AuditConfig("ST", "race", 5, include_centers=True)
    assert cfg.include_centers is False


def test_cst_centres_are_counterfactuals(synthetic):
    t, m = synthetic
    rep = run_cst(t, AuditConfig("CST", "race", 3), None, m)
    ug = dict(zip(t.row_ids.tolist(), t.column("UGPA").tolist()))
    b = m.equations["UGPA"].coefficients["race"]
    for c in rep.cases[:20]:
        assert c.comparator["UGPA"] == pytest.approx(ug[c.complainant_id] - b, abs=1e-12)


def test_zero_effect_cst_equals_st():
    m0 = law_model(scale_protected=0.0)
    t = apply_decision_rule(admission_rule(), sample_from_scm(law_model(), 1200, 8, ROOT_PROBS))
    st_ = run_st(t, AuditConfig("ST", "race", 15))
    cst = run_cst(t, AuditConfig("CST", "race", 15), None, m0)
    assert st_.flagged_ids == cst.flagged_ids
    for a, b in zip(st_.cases, cst.cases):
        assert a.test.member_ids.tolist() == b.test.member_ids.tolist()
        assert a.delta_p == b.delta_p


def test_ci_attached(synthetic):
    t, _ = synthetic
    rep = run_st(t, AuditConfig("ST", "race", 10, ci_level=0.9))
    for c in rep.cases:
        assert c.ci_low <= c.delta_p <= c.ci_high


def test_pool_shortfall_recorded():
    t = law_table([3.0, 3.1, 2.0, 2.5, 3.9], [30.0, 31.0, 20.0, 25.0, 40.0], [1, 1, 0, 0, 0], y=[0, 1, 0, 1, 1])
    rep = run_st(t, AuditConfig("ST", "race", 4))
    for c in rep.cases:
        assert c.control.size == 1 and c.control.shortfall == 3
        assert c.test.size == 3 and c.test.shortfall == 1


def test_cst_needs_root_model(synthetic):
    t, m = synthetic
    with pytest.raises(ModelError):
        run_cst(t, AuditConfig("CST", "race", 3), None, None)
    t2 = from_columns({"g": [0, 1, 1, 0], "UGPA": [1.0, 2.0, 3.0, 2.5], "LSAT": [10.0, 20.0, 30.0, 25.0], "Y": [0, 1, 0, 1]},
                      {}, {"g": "protected", "Y": "outcome"})
    with pytest.raises(ModelError, match="not a root"):
        run_cst(t2, AuditConfig("CST", "g", 1), None, m)


@pytest.mark.parametrize("seed", range(5))
def test_monotone_response(seed):
    t = sample_from_scm(law_model(), 1000, seed, ROOT_PROBS)
    t = apply_decision_rule(DecisionRule({"UGPA": 0.6, "LSAT": 0.4}, 16.0), t)
    base = run_st(t, AuditConfig("ST", "race", 25)).flagged_count
    rng = np.random.default_rng(seed)
    y = t.column("Y").copy()
    prot = np.flatnonzero((t.column("race") == 1) & (y == 1))
    flip = rng.choice(prot, size=max(1, len(prot) // 2), replace=False)
    y[flip] = 0
    attr = t.attribute("Y")
    t2 = t.with_column(attr, y)
    assert run_st(t2, AuditConfig("ST", "race", 25)).flagged_count >= base


def test_grid_equals_single_runs(synthetic):
    t, m = synthetic
    grid = evaluate(t, AuditConfig("CST", "race", 5), [5, 12, 30], model=m)
    for k in (5, 12, 30):
        single = run_cst(t, AuditConfig("CST", "race", k), None, m)
        assert json.dumps(single.to_dict()) == json.dumps(grid[k].to_dict())


def test_determinism_and_parallel(synthetic):
    t, m = synthetic
    a = evaluate(t, AuditConfig("CST", "sex", 10), [10, 25], model=m)
    b = evaluate(t, AuditConfig("CST", "sex", 10), [10, 25], model=m)
    c = evaluate(t, AuditConfig("CST", "sex", 10), [10, 25], model=m, workers=4)
    for k in (10, 25):
        ja, jb, jc = (json.dumps(r[k].to_dict(), sort_keys=True) for r in (a, b, c))
        assert ja == jb == jc


def test_requires_outcome_and_encoded_protected():
    t = law_table([3.0, 2.0], [30.0, 20.0], [1, 0])
    with pytest.raises(DataError, match="outcome"):
        run_st(t, AuditConfig("ST", "race", 1))
    t = law_table([3.0, 2.0], [30.0, 20.0], [1, 0], y=[0, 1])
    with pytest.raises(DataError, match="protected"):
        run_st(t, AuditConfig("ST", "UGPA", 1))


def test_config_validation():
    with pytest.raises(ValueError):
        AuditConfig("XT", "race", 1)
    with pytest.raises(ValueError):
        AuditConfig("ST", "race", 0)
    with pytest.raises(ValueError):
        AuditConfig("ST", "race", 1, tau=1.5)
