import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covbal.core import CovariateStructure, ImbalanceState, WeightConfig, stratum_weight
from covbal.theory import (
    IllConditionedWeightsError,
    UnsupportedStructureError,
    c_of_wo,
    check_all,
    check_condition_b,
    drift_delta_v,
    solve3,
    u_star,
)
from conftest import structures, weight_configs

TWO_BY_TWO = CovariateStructure((2, 2))


def w2(wo, wm1, wm2, ws):
    return WeightConfig(wo, ws, (wm1, wm2))


def test_condition_b_reference_settings():
    assert check_condition_b(w2(0.3, 0.1, 0.1, 0.5)).satisfied
    assert not check_condition_b(w2(0.0, 0.5, 0.5, 0.0)).satisfied


def test_condition_b_pure_stratification():
    res = check_condition_b(w2(0, 0, 0, 1))
    assert res.x == (0.0, 0.0, 0.0)
    assert res.satisfied


def test_solve3_against_numpy():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.normal(size=(3, 3))
        b = rng.normal(size=3)
        assert np.allclose(solve3(a.tolist(), b.tolist()), np.linalg.solve(a, b))


def test_solve3_singular():
    with pytest.raises(IllConditionedWeightsError) as exc:
        solve3([[1, 1, 1], [1, 1, 1], [0, 1, 2]], [1, 2, 3])
    assert exc.value.determinant == 0


@pytest.mark.parametrize("wo, expected", [(0.0, 0.31), (0.2, 0.23), (0.4, 0.17), (0.6, 0.11), (0.8, 0.05)])
def test_c_of_wo_table(wo, expected):
    assert c_of_wo(wo) == pytest.approx(expected, abs=0.005)


def test_c_of_wo_decreasing():
    grid = np.linspace(0, 1, 201)
    vals = [c_of_wo(x) for x in grid]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_equal_margin_shortcut_agrees_with_linear_system():
    checked = 0
    for wo in np.linspace(0, 0.9, 10):
        for wm in np.linspace(0, (1 - wo) / 2, 12)[:-1]:
            wm = float(wm)
            ws = 1 - wo - 2 * wm
            if abs(wm - c_of_wo(wo)) < 1e-9:
                continue
            assert check_condition_b(w2(wo, wm, wm, ws)).satisfied == (wm < c_of_wo(wo))
            checked += 1
    assert checked >= 100


def test_u_star_two_covariates_closed_form():
    for m1, m2 in [(2, 2), (2, 5), (3, 4), (5, 5)]:
        s = CovariateStructure((m1, m2))
        for wo, wm1, wm2 in itertools.product([0, 0.1, 0.2], [0, 0.05, 0.15], [0.02, 0.1]):
            w = WeightConfig(wo, 1 - wo - wm1 - wm2, (wm1, wm2))
            expect = (m1 * m2 - 1) * wo + (m1 - 1) * wm2 + (m2 - 1) * wm1
            assert u_star(s, w) == pytest.approx(expect, abs=1e-12)


def test_condition_c_threshold_five_by_five():
    s = CovariateStructure((5, 5))
    at = WeightConfig(0, 1 - 2 / 16, (1 / 16, 1 / 16))
    assert u_star(s, at) == 0.5
    assert not check_all(s, at).condition_c
    below = WeightConfig(0, 1 - 2 * 0.0624, (0.0624, 0.0624))
    assert check_all(s, below).condition_c


def test_u_star_stratum_only():
    s = CovariateStructure((3, 4, 2))
    assert u_star(s, WeightConfig(0, 1, (0, 0, 0))) == 0


@settings(max_examples=100)
@given(structures(max_covariates=3, max_levels=3).flatmap(lambda s: st.tuples(st.just(s), weight_configs(s.num_covariates))))
def test_u_star_is_row_sum(args):
    s, w = args
    us = u_star(s, w)
    for target in s.profile_table:
        row = sum(stratum_weight(s, w, target, other) for other in s.profile_table if other != target)
        assert row == pytest.approx(us, abs=1e-10)


def test_check_all_ten_binary():
    s = CovariateStructure((2,) * 10)
    rep = check_all(s, WeightConfig(0, 0.5, (0.05,) * 10))
    assert rep.condition_a
    assert rep.condition_b is None and rep.condition_b_prime is None
    assert rep.u_star == pytest.approx(u_star(s, WeightConfig(0, 0.5, (0.05,) * 10)))


def test_check_all_equal_margins():
    rep = check_all(TWO_BY_TWO, w2(0.20, 0.22, 0.22, 0.36))
    assert rep.condition_b_prime.satisfied
    assert rep.condition_b.satisfied
    assert rep.recurrence_guaranteed


def test_check_all_unequal_margins_has_no_shortcut():
    rep = check_all(TWO_BY_TWO, w2(0.1, 0.1, 0.2, 0.6))
    assert rep.condition_b is not None and rep.condition_b_prime is None


def test_check_all_without_stratum_weight():
    rep = check_all(TWO_BY_TWO, w2(0.0, 0.5, 0.5, 0.0))
    assert not rep.condition_a
    assert not rep.recurrence_guaranteed


PROBS = [0.1, 0.2, 0.3, 0.4]


def test_drift_zero_state():
    res = drift_delta_v(ImbalanceState.zeros(TWO_BY_TWO), TWO_BY_TWO, w2(0.3, 0.1, 0.1, 0.5), 0.85, PROBS)
    assert res.exact == pytest.approx(4)
    assert res.closed_form == 4


def test_drift_worked_state(example_2x2):
    s, w, state = example_2x2
    res = drift_delta_v(state, s, w, 0.85, PROBS)
    assert res.exact == pytest.approx(res.closed_form, abs=1e-10)


@settings(max_examples=100)
@given(
    st.lists(st.integers(-8, 8), min_size=4, max_size=4),
    weight_configs(2),
    st.floats(0.5, 0.99),
)
def test_drift_matches_closed_form(d, w, p):
    state = ImbalanceState.from_counts(TWO_BY_TWO, d)
    res = drift_delta_v(state, TWO_BY_TWO, w, p, PROBS)
    assert res.exact == pytest.approx(res.closed_form, abs=1e-10)


@settings(max_examples=50)
@given(st.lists(st.integers(-8, 8), min_size=4, max_size=4), weight_configs(2))
def test_drift_fair_coin_is_four(d, w):
    state = ImbalanceState.from_counts(TWO_BY_TWO, d)
    assert drift_delta_v(state, TWO_BY_TWO, w, 0.5, PROBS).exact == pytest.approx(4, abs=1e-10)


def test_drift_rejects_bad_inputs():
    state = ImbalanceState.zeros(TWO_BY_TWO)
    w = w2(0.3, 0.1, 0.1, 0.5)
    with pytest.raises(ValueError):
        drift_delta_v(state, TWO_BY_TWO, w, 0.85, [0, 0.3, 0.3, 0.4])
    s3 = CovariateStructure((2, 3))
    with pytest.raises(UnsupportedStructureError):
        drift_delta_v(ImbalanceState.zeros(s3), s3, WeightConfig(0, 1, (0, 0)), 0.85, [1 / 6] * 6)
