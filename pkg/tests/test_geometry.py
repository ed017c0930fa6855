import math
from dataclasses import replace

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from pmelab.errors import DomainError, UnboundedSignal
from pmelab.geometry import (DEFAULT_SPEC, Integrand, QuadratureSpec, ball_volume, cap_fraction,
                             integrate, intrinsic, lp_mean, make_rng, mean, monte_carlo, one_sided,
                             slice_mean, sphere_area, standard, sup_norm, superlevel_measure)
from pmelab.solutions import ExactSolution, constant_field


def test_volumes():
    assert ball_volume(3) == pytest.approx(4 * math.pi / 3)
    assert ball_volume(2, 2.0) == pytest.approx(4 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


def test_intrinsic_cylinder_shape():
    c = intrinsic((1.0, 0.0, 0.0), 0.5, 0.2, theta=4.0, m=0.5)
    assert c.radius == pytest.approx(4.0 ** (0.5 * -0.5 / 1.5) * 0.2)
    assert c.t_lo == pytest.approx(0.5 - 0.2**3) and c.t_hi == pytest.approx(0.5 + 0.2**3)
    assert c.volume() == pytest.approx(ball_volume(3, c.radius) * 2 * 0.2**3)


def test_standard_and_one_sided():
    s = standard((0.0, 0.0), 1.0, 0.5)
    assert (s.t_lo, s.t_hi) == (0.75, 1.25)
    o = one_sided((0.0, 0.0), 1.0, 0.5, 0.3)
    assert o.t_lo == pytest.approx(0.7) and o.t_hi == 1.0


def test_containment():
    big = standard((0.0, 0.0), 0.0, 1.0)
    small = standard((0.1, 0.0), -0.1, 0.3)
    assert big.contains_cylinder(small)
    assert not small.contains_cylinder(big)
    assert big.intersects(small)
    assert bool(big.contains(np.array([0.5, 0.0]), -0.5))


def test_mean_of_constant_is_exact():
    fld = constant_field(3, 0.5, 2.5)
    cyl = intrinsic((1.0, 0.2, 0.0), 0.0, 0.3, 1.0, 0.5)
    res = mean(Integrand(lambda r, t: np.full(np.broadcast(r, t).shape, 2.5)), cyl)
    assert float(res.value) == pytest.approx(2.5, rel=1e-12)
    assert float(np.asarray(mean(fld, cyl).value)[0]) == pytest.approx(2.5, rel=1e-12)


def test_radius_mean_over_unit_ball():
    cyl = standard((0.0, 0.0, 0.0), 0.0, 1.0)
    res = mean(Integrand(lambda r, t: np.asarray(r, float) + 0 * np.asarray(t)), cyl)
    assert float(res.value) == pytest.approx(0.75, rel=1e-10)


def test_singular_mean_over_centred_ball():
    # mean of |x|^{-2} over B_1 in R^3 equals 3
    cyl = standard((0.0, 0.0, 0.0), 0.0, 1.0)
    f = Integrand(lambda r, t: np.asarray(r, float) ** -2.0 + 0 * np.asarray(t), True, True)
    assert float(mean(f, cyl).value) == pytest.approx(3.0, rel=1e-6)


def test_off_centre_mean_against_nested_quadrature():
    # B((0.3, 0), 0.5) in R^2 contains the origin; f = r^2 + t
    cyl = standard((0.3, 0.0), 1.0, 0.5)
    f = Integrand(lambda r, t: np.asarray(r, float) ** 2 + np.asarray(t, float))
    got = float(mean(f, cyl).value)
    # |x|^2 averaged over a disc of radius s centred at distance d is d^2 + s^2 / 2
    t_mean = 1.0
    assert got == pytest.approx(0.09 + 0.125 + t_mean, rel=1e-10)


def test_off_centre_mean_against_monte_carlo():
    sol = ExactSolution("separable", 3, 0.1)
    cyl = standard((0.4, 0.1, 0.0), 0.0, 0.3)
    f = Integrand(lambda r, t: np.asarray(sol.u_radial(r, t)) ** 0.5, True, True)
    exact = float(mean(f, cyl).value)
    mc = mean(f, cyl, replace(DEFAULT_SPEC, method="monte_carlo", seed=5, mc_samples=400_000))
    assert abs(float(mc.value) - exact) < 5 * mc.error
    assert mc.details["seed"] == 5


def test_monte_carlo_is_reproducible_and_requires_seed():
    cyl = standard((0.0, 0.0), 0.0, 1.0)
    f = Integrand(lambda r, t: np.asarray(r) ** 2)
    spec = replace(DEFAULT_SPEC, seed=3, mc_samples=20_000)
    assert monte_carlo(f, cyl, spec).value == monte_carlo(f, cyl, spec).value
    with pytest.raises(DomainError):
        make_rng(None)


def test_non_radial_product_rule():
    cyl = standard((0.5, 0.0), 0.0, 0.5)
    f = Integrand(lambda x, t: x[..., 0] ** 2, radial=False)
    # mean of x1^2 over a disc centred at (0.5, 0) with radius 0.5: 0.25 + 0.25/4
    assert float(mean(f, cyl).value) == pytest.approx(0.3125, rel=1e-8)


@given(st.floats(0.05, 3.0), st.floats(0.01, 2.0), st.integers(2, 7))
def test_cap_fraction_matches_direct_integral(d, s, N):
    mp.mp.dps = 40
    rho = np.linspace(max(d - s, 0.0) + 1e-6, d + s - 1e-6, 5)
    got = cap_fraction(rho, d, s, N)
    for r, g in zip(rho, got):
        R, D, S = mp.mpf(float(r)), mp.mpf(d), mp.mpf(s)
        c = (R * R + D * D - S * S) / (2 * R * D)
        if c <= -1:
            assert g == 1.0
            continue
        if c >= 1:
            assert g == 0.0
            continue
        phi = mp.acos(c)
        num = mp.quad(lambda a: mp.sin(a) ** (N - 2), [0, phi])
        den = mp.quad(lambda a: mp.sin(a) ** (N - 2), [0, mp.pi])
        assert g == pytest.approx(float(num / den), rel=1e-9, abs=1e-14)


def test_cap_fraction_tiny_ball_far_away():
    # a ball of radius 1e-9 at distance 1: the cap fraction at the middle radius
    # behaves like (s / d)^{N-1} times a dimensional constant
    d, s, N = 1.0, 1e-9, 3
    val = float(cap_fraction(np.array([1.0]), d, s, N)[0])
    # on the sphere |y| = 1 the cap has angular radius ~ s, area pi s^2 of 4 pi
    assert val == pytest.approx(s * s / 4, rel=1e-6)


def test_lp_mean_and_superlevel_measure():
    cyl = standard((0.0, 0.0, 0.0), 0.0, 1.0)
    f = Integrand(lambda r, t: np.asarray(r, float) + 0 * np.asarray(t))
    assert float(lp_mean(f, cyl, 2.0).value) == pytest.approx(0.6, rel=1e-10)
    meas = float(superlevel_measure(f, cyl, 0.5).value)
    assert meas == pytest.approx(ball_volume(3) * (1 - 0.125) * 2.0, rel=1e-8)
    with pytest.raises(DomainError):
        lp_mean(f, cyl, 0.0)


def test_sup_norm_and_pole():
    sol = ExactSolution("separable", 3, 0.1)
    fld = sol.field()
    cyl = standard((1.0, 0.0, 0.0), 0.0, 0.5)
    sup = sup_norm(fld, cyl, monotone=True).value
    assert sup == pytest.approx(float(sol.u_radial(0.5, -0.25)), rel=1e-12)
    with pytest.raises(UnboundedSignal):
        sup_norm(fld, standard((0.0, 0.0, 0.0), 0.0, 0.5))


def test_slice_mean_constant():
    res = slice_mean(Integrand(lambda r, t: 0 * np.asarray(r) + 7.0), (0.2, 0.0), 0.1, 0.0)
    assert float(res.value) == pytest.approx(7.0, rel=1e-12)
