import math

import pytest
from hypothesis import given, strategies as st

from pmelab.errors import DomainError
from pmelab.exponents import (Params, critical_m, degiorgi_simulate, degiorgi_threshold,
                              eps_o_separable, geometric_partial_sums, geometric_sums,
                              interpolation_bound, interpolation_sharp_start, interpolation_simulate,
                              iter_moser_recursion, lambda_r, moser_increment, moser_sequence,
                              q_exponent, scaling_deficit, theta_bound_exponent)


def test_reference_tuple():
    P = Params(3, 0.2, 2.0, 3.0)
    assert lambda_r(P) == pytest.approx(1.6, abs=1e-12)
    assert scaling_deficit(P) == pytest.approx(2.5, abs=1e-12)
    assert q_exponent(P) == pytest.approx(6 / 7.6, abs=1e-12)
    assert critical_m(3) == pytest.approx(0.2, abs=1e-15)


def test_critical_m_values():
    assert critical_m(2) == 0.0
    assert critical_m(6) == 0.5
    with pytest.raises(DomainError):
        critical_m(0)


def test_heat_case_has_no_deficit():
    assert scaling_deficit(Params(3, 1.0, 2.0)) == pytest.approx(1.0)


def test_eps_o_vanishes_at_critical_m():
    for N in range(3, 11):
        assert eps_o_separable(N, critical_m(N)) == 0.0


def test_eps_o_value_and_domain():
    assert eps_o_separable(3, 0.1) == pytest.approx(5 / 11, rel=1e-14)
    with pytest.raises(DomainError):
        eps_o_separable(3, 0.3)
    with pytest.raises(DomainError):
        eps_o_separable(2, 0.1)


def test_nonpositive_lambda_is_rejected_but_constructible():
    P = Params(6, 0.3, 2.0)
    assert lambda_r(P) < 0 and not P.admissible
    with pytest.raises(DomainError):
        scaling_deficit(P)
    with pytest.raises(DomainError):
        q_exponent(P)


def test_moser_first_terms():
    # lambda_r = 1.3 for (3, 0.1, 2): alpha_1 = (1.3/0.4)(5/3) + 1.25
    P = Params(3, 0.1, 2.0)
    a1, p1 = moser_sequence(P, 1)
    assert a1 == pytest.approx(1.3 / 0.4 * 5 / 3 + 1.25, rel=1e-14)
    assert p1 == pytest.approx(2 * a1 + 11, rel=1e-14)
    a0, p0 = moser_sequence(P, 0)
    assert P.m * p0 == pytest.approx(P.r, rel=1e-14)


admissible = st.tuples(st.integers(3, 10), st.floats(0.05, 0.95), st.floats(0.5, 8.0)).filter(
    lambda t: lambda_r(Params(t[0], t[1], t[2])) > 0.05)


@given(admissible)
def test_q_in_range_and_deficit_above_one(t):
    P = Params(*t)
    q = q_exponent(P)
    assert P.N / (P.N + 2) < q < 1
    assert scaling_deficit(P) > 1


@given(admissible)
def test_moser_recursion_matches_closed_form(t):
    P = Params(*t)
    it = iter_moser_recursion(P)
    kappa = 1 + 2 / P.N
    for i in range(51):
        a_rec = next(it)
        a, p = moser_sequence(P, i)
        assert a_rec == pytest.approx(a, rel=1e-12, abs=1e-12)
        closed_p = lambda_r(P) / (2 * P.m) * kappa**i + P.N * (1 - P.m) / (2 * P.m)
        assert p == pytest.approx(closed_p, rel=1e-12)
    a5, _ = moser_sequence(P, 5)
    a6, _ = moser_sequence(P, 6)
    assert 2 * a6 == pytest.approx(2 * a5 * kappa + moser_increment(P), rel=1e-12)


@given(st.integers(3, 10), st.floats(0.05, 1.0), st.floats(1.0, 8.0))
def test_moser_alpha_growth_bound_subcritical(N, frac, r):
    m = frac * critical_m(N)
    P = Params(N, m, r)
    if lambda_r(P) <= 0:
        return
    kappa = 1 + 2 / N
    for i in range(30):
        a, _ = moser_sequence(P, i)
        assert 1 + a <= r / (2 * m) * kappa**i * (1 + 1e-12)


def test_geometric_sums():
    assert geometric_sums(2) == (2.0, 4.0)
    assert geometric_sums(3) == (2.5, 6.25)
    s1, s2 = geometric_partial_sums(3, 60)
    assert abs(s1 - 2.5) < 1e-9 and abs(s2 - 6.25) < 1e-9


def test_theta_bound_exponent():
    P = Params(3, 0.2, 2.0)
    assert theta_bound_exponent(P) == pytest.approx(1.2 / (0.2 * 1.6) * (4 + 15), rel=1e-14)


def test_degiorgi_examples():
    assert degiorgi_threshold(2, 4, 0.5) == pytest.approx(1 / 1024, rel=1e-14)
    assert degiorgi_simulate(0.5, 1, 1, 1).verdict == "converges"
    assert degiorgi_simulate(2e-3, 2, 4, 0.5).verdict == "diverges"
    assert degiorgi_simulate(0.0, 2, 4, 0.5).verdict == "converges"
    with pytest.raises(DomainError):
        degiorgi_threshold(1, 0.5, 1)


@given(st.floats(0.5, 10), st.floats(1, 8), st.floats(0.1, 2), st.floats(0.05, 3), st.booleans())
def test_degiorgi_threshold_is_sharp(C, b, alpha, gap, above):
    y0 = degiorgi_threshold(C, b, alpha) * math.exp(gap if above else -gap)
    assert degiorgi_simulate(y0, C, b, alpha).verdict == ("diverges" if above else "converges")


def test_interpolation_examples():
    assert interpolation_bound(3.0, 5.0, 1.0) == pytest.approx(6.0)
    assert interpolation_bound(1.0, 4.0, 0.5) == pytest.approx(64.0)
    with pytest.raises(DomainError):
        interpolation_bound(1.0, 1.0, 0.5)


@given(st.floats(0.5, 10), st.floats(1.5, 8), st.floats(0.1, 0.9))
def test_interpolation_sharp_start_separates(C, b, alpha):
    s = interpolation_sharp_start(C, b, alpha)
    assert interpolation_bound(C, b, alpha) == pytest.approx(2 ** (1 / alpha) * s, rel=1e-10)
    assert interpolation_simulate(s * 1.05, C, b, alpha) == "unbounded"
    assert interpolation_simulate(s * 0.95, C, b, alpha) == "bounded"
