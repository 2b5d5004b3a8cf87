import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import integrate, stats

from dcsplit.costs import (
    ResponseDist,
    batch_response,
    blocking_cost,
    delay_cost,
    delay_cost_table,
    expected_max,
    mc_delay_oracle,
    response_dist,
)
from dcsplit.model import ModelParams, State, StateSpace


def exp(rate, shift=0.0):
    return ResponseDist.phased(0, rate, rate, shift)


def test_response_dist_examples():
    d = response_dist(5, 1.0, 2, 1)
    assert (d.kind, d.wait_stages, d.service_rate) == ("phased", 0, 1.0)
    d = response_dist(2, 1.5, 2, 1, shift=0.5)
    assert (d.wait_stages, d.wait_rate, d.service_rate, d.shift) == (1, 3.0, 1.5, 0.5)
    assert response_dist(2, 1.5, 2, 0).is_zero
    # last of two packets joining a full 2-server queue holding 3 waits 3 departures
    assert response_dist(2, 1.0, 3, 2).wait_stages == 3
    with pytest.raises(ValueError):
        response_dist(2, 1.0, 4, 2, capacity=5)


def test_mean():
    d = ResponseDist.phased(3, 2.0, 0.5, 0.25)
    assert d.mean() == pytest.approx(0.25 + 1.5 + 2.0)
    assert ResponseDist.zero().mean() == 0.0


@pytest.mark.parametrize("w, r, mu", [(3, 2.0, 1.0), (2, 0.5, 3.0), (4, 1.5, 1.5), (12, 9.0, 1.5), (1, 1.0, 1.0 + 1e-9), (1, 10.0, 0.01), (8, 0.2, 10.0), (3, 0.1, 40.0)])
def test_survival_matches_numerical_convolution(w, r, mu):
    d = ResponseDist.phased(w, r, mu)
    for t in (0.05, 0.7, 3.0, 12.0, 70.0):
        ref = stats.gamma.sf(t, w, scale=1 / r) + integrate.quad(
            lambda x: stats.gamma.pdf(x, w, scale=1 / r) * math.exp(-mu * (t - x)), 0, t, epsabs=1e-15, epsrel=1e-12
        )[0]
        assert float(d.survival(t)) == pytest.approx(ref, rel=1e-9, abs=1e-15)


def test_survival_shift():
    d = exp(2.0, shift=0.5)
    assert float(d.survival(0.3)) == 1.0
    assert float(d.survival(1.5)) == pytest.approx(math.exp(-2.0))


def test_expected_max_trivial():
    assert expected_max(exp(1.0), ResponseDist.zero()) == pytest.approx(1.0, rel=1e-12)
    assert expected_max(exp(1.0), exp(1.0)) == pytest.approx(1.5, rel=1e-8)
    assert expected_max(ResponseDist.zero(), ResponseDist.zero()) == 0.0
    with pytest.raises(ValueError):
        expected_max(exp(1.0), exp(2.0), rel_tol=0.1)


def test_expected_max_closed_form_two_exponentials():
    # E max(X, Y) = 1/a + 1/b - 1/(a+b)
    assert expected_max(exp(1.0), exp(1.5)) == pytest.approx(1 + 1 / 1.5 - 1 / 2.5, rel=1e-8)


def test_expected_max_vs_monte_carlo_reference_rates():
    dm, ds = exp(1.0), exp(1.5, shift=0.5)
    mean, se = mc_delay_oracle(dm, ds, 10**7, seed=7)
    assert abs(expected_max(dm, ds) - mean) <= 3 * se


def test_mc_oracle_trivial_cases():
    m, se = mc_delay_oracle(exp(1.0), ResponseDist.zero(), 10**6, seed=1)
    assert abs(m - 1.0) <= 3 * se
    m, se = mc_delay_oracle(exp(1.0), exp(1.0), 10**6, seed=2)
    assert abs(m - 1.5) <= 3 * se
    assert mc_delay_oracle(exp(1.0), exp(2.0), 10**4, seed=3) == mc_delay_oracle(exp(1.0), exp(2.0), 10**4, seed=3)
    with pytest.raises(ValueError):
        mc_delay_oracle(exp(1.0), exp(1.0), 100)


dist_st = st.builds(
    ResponseDist.phased,
    wait_stages=st.integers(0, 8),
    wait_rate=st.floats(0.2, 10.0),
    service_rate=st.floats(0.2, 10.0),
    shift=st.floats(0.0, 2.0),
)


@settings(max_examples=60, deadline=None)
@given(dist_st, dist_st)
def test_expected_max_bounds_and_symmetry(a, b):
    v = expected_max(a, b)
    assert v >= max(a.mean(), b.mean()) * (1 - 1e-7)
    assert v <= (a.mean() + b.mean()) * (1 + 1e-7)
    assert v == pytest.approx(expected_max(b, a), rel=1e-7)


@settings(max_examples=40, deadline=None)
@given(dist_st, dist_st, st.sampled_from(["stages", "shift", "wait_rate", "service_rate"]))
def test_expected_max_monotone(a, b, knob):
    if knob == "stages":
        bigger = ResponseDist.phased(a.wait_stages + 1, a.wait_rate, a.service_rate, a.shift)
    elif knob == "shift":
        bigger = ResponseDist.phased(a.wait_stages, a.wait_rate, a.service_rate, a.shift + 0.3)
    elif knob == "wait_rate":
        assume(a.wait_stages > 0)
        bigger = ResponseDist.phased(a.wait_stages, a.wait_rate * 0.7, a.service_rate, a.shift)
    else:
        bigger = ResponseDist.phased(a.wait_stages, a.wait_rate, a.service_rate * 0.7, a.shift)
    assert expected_max(bigger, b) >= expected_max(a, b) * (1 - 1e-7)


def test_delay_cost_examples():
    p = ModelParams(n_m=5, n_s=2, queue_cap=5, mu_m=1.0, mu_s=1.5, backhaul_delay=0.5)
    assert delay_cost(p, State(2, 2, 0), 0) == 0.0
    assert delay_cost(p, State(2, 2, 2), 0) == 0.0
    dm, ds = batch_response(p, State(2, 2, 2), 2)
    assert (dm.wait_stages, dm.service_rate, dm.shift) == (0, 1.0, 0.0)
    assert ds == ResponseDist.phased(1, 3.0, 1.5, 0.5)
    mean, se = mc_delay_oracle(dm, ds, 10**7, seed=11)
    assert abs(delay_cost(p, State(2, 2, 2), 2) - mean) <= 3 * se


def test_blocking_cost(reference):
    assert blocking_cost(reference, State(0, 0, 3), 0) == 0.5
    assert blocking_cost(reference.replace(delta=0.3), State(0, 0, 3), 0) == 0.3
    assert blocking_cost(reference.replace(delta=0.3), State(0, 0, 1), 0) == pytest.approx(0.7)
    assert blocking_cost(reference, State(0, 0, 1), 1) == 0.0
    assert blocking_cost(reference, State(0, 0, 0), 0) == 0.0


def test_cost_table_properties():
    p = ModelParams(n_m=2, n_s=3, queue_cap=3)
    space = StateSpace(p)
    c = delay_cost_table(space)
    assert np.array_equal(np.isnan(c), ~space.feasible)
    assert (c[:, 0] == 0).all()
    assert (c[space.coords[:, 2] == 0][:, 1:] != c[space.coords[:, 2] == 0][:, 1:]).all()  # NaN off departures
    assert (np.nan_to_num(c) >= 0).all()
    # non-decreasing in s1 and s2 for a fixed accepting action
    shape = (p.cap_m + 1, p.cap_s + 1, 2 * p.max_batch + 1, p.n_actions)
    grid = c.reshape(shape)
    for k in range(1, 5):
        for a in range(1, p.n_actions):
            g = grid[:, :, k, a]
            d1 = np.diff(g, axis=0)
            d2 = np.diff(g, axis=1)
            assert (d1[~np.isnan(d1)] >= -1e-9).all()
            assert (d2[~np.isnan(d2)] >= -1e-9).all()
