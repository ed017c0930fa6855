import math

import mpmath as mp
import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from scipy import integrate

from pmelab.errors import DomainError, SingularityError
from pmelab.geometry import make_rng
from pmelab.solutions import (ExactSolution, RadialField, SampledRadial, constant_field,
                              gradient_spike_field, read_csv, stack_fields, vpower, write_csv,
                              zero_field)


def test_vpower_examples():
    assert np.allclose(vpower(np.array([3.0, 4.0]), 2.0), [15.0, 20.0])
    assert vpower(-2.0, 0.5) == pytest.approx(-math.sqrt(2), rel=1e-15)
    assert vpower(0.0, 0.5) == 0.0
    assert np.all(vpower(np.zeros(3), 0.3) == 0.0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=4), st.floats(0.1, 3.0))
def test_vpower_norm_and_direction(u, alpha):
    u = np.array(u)
    v = vpower(u, alpha)
    n = np.linalg.norm(u)
    assert np.linalg.norm(v) == pytest.approx(n**alpha, rel=1e-12, abs=1e-300)
    if n > 0:
        assert np.allclose(v / np.linalg.norm(v), u / n)


def test_separable_prefactor_high_precision():
    mp.mp.dps = 40
    K = (mp.mpf("0.14") / mp.mpf("0.9")) ** (mp.mpf(10) / 9)
    sol = ExactSolution("separable", 3, 0.1, T=1.0)
    assert sol.K == pytest.approx(float(K), rel=1e-14)
    assert float(sol.u_radial(1.0, 0.0)) == pytest.approx(float(K), rel=1e-14)
    # frozen from the 40-digit evaluation above
    assert sol.K == pytest.approx(0.12650131181434574, rel=1e-14)


def test_separable_gradient_closed_form():
    sol = ExactSolution("separable", 3, 0.1, T=1.0)
    m, K = 0.1, sol.K
    expected = 2 * m / (1 - m) * K**m * 1.0 ** (m / (1 - m)) * 1.0
    assert abs(float(sol.dum_radial(1.0, 0.0))) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("kind,N,m,A", [("separable", 3, 0.1, 0.0), ("king_kosov", 3, 0.1, 1.0),
                                        ("king_kosov", 4, 0.2, 2.5), ("kosov_critical", 6, 0.5, 0.0)])
def test_gradient_against_central_differences(kind, N, m, A):
    T = 2.0 if kind == "kosov_critical" else 1.0
    sol = ExactSolution(kind, N, m, T, A)
    r, t = (0.3, 0.5) if kind == "kosov_critical" else (1.0, 0.0)
    h = 1e-5
    fd = (float(sol.um_radial(r + h, t)) - float(sol.um_radial(r - h, t))) / (2 * h)
    assert float(sol.dum_radial(r, t)) == pytest.approx(fd, rel=1e-6)


def test_symbolic_gradient_oracle():
    r, tau = sp.symbols("r tau", positive=True)
    N, m = 4, sp.Rational(1, 5)
    lam = N * (m - 1) + 2
    K = (2 * m * abs(lam) / (1 - m)) ** (1 / (1 - m))
    u = K * tau ** (1 / (1 - m)) * r ** (-2 / (1 - m))
    d = sp.diff(u**m, r)
    sol = ExactSolution("separable", N, float(m), T=1.0)
    val = float(d.subs({r: 0.7, tau: 0.8}))
    assert float(sol.dum_radial(0.7, 0.2)) == pytest.approx(val, rel=1e-12)


def test_residuals_at_standard_points():
    x = np.array([1.0, 0.0, 0.0])
    assert abs(ExactSolution("separable", 3, 0.1).residual(x, 0.0)) < 1e-4
    assert abs(ExactSolution("king_kosov", 3, 0.1, A=1.0).residual(x, 0.0)) < 1e-4
    ko = ExactSolution("kosov_critical", 6, 0.5, T=2.0)
    assert abs(ko.residual(np.array([0.3, 0, 0, 0, 0, 0]), 0.5)) < 1e-3


def test_residual_margin_violation():
    sol = ExactSolution("separable", 3, 0.1)
    with pytest.raises(DomainError):
        sol.residual(np.array([1e-3, 0, 0]), 0.0)


def test_king_kosov_reduces_to_separable():
    sep = ExactSolution("separable", 3, 0.1)
    kk = ExactSolution("king_kosov", 3, 0.1, A=0.0)
    rng = make_rng(1)
    r = rng.uniform(0.01, 5.0, 20)
    t = rng.uniform(-2.0, 0.99, 20)
    assert np.allclose(kk.u_radial(r, t), sep.u_radial(r, t), rtol=1e-10, atol=0)
    assert np.allclose(kk.dum_radial(r, t), sep.dum_radial(r, t), rtol=1e-10, atol=0)


def test_domain_errors():
    with pytest.raises(SingularityError):
        ExactSolution("separable", 3, 0.1).u_radial(0.0, 0.0)
    with pytest.raises(DomainError):
        ExactSolution("separable", 3, 0.3)
    with pytest.raises(DomainError):
        ExactSolution("kosov_critical", 6, 0.4)
    with pytest.raises(DomainError):
        ExactSolution("kosov_critical", 6, 0.5, T=2.0).u_radial(0.3, 1.5)
    with pytest.raises(DomainError):
        ExactSolution("separable", 3, 0.1).kosov_G(0.1, 0.1)


def test_extinction_clamps_to_zero():
    sol = ExactSolution("separable", 3, 0.1, T=1.0)
    assert float(sol.u_radial(1.0, 1.5)) == 0.0
    assert float(sol.dum_radial(1.0, 1.5)) == 0.0


def test_rotation_invariance():
    sol = ExactSolution("king_kosov", 3, 0.1, A=1.0)
    rng = make_rng(3)
    x = rng.standard_normal(3)
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    assert sol.eval(Q @ x, 0.2) == pytest.approx(sol.eval(x, 0.2), rel=1e-12)


@pytest.mark.parametrize("kind,N,m,T", [("separable", 3, 0.1, 1.0), ("king_kosov", 3, 0.1, 1.0),
                                        ("kosov_critical", 6, 0.5, 2.0)])
def test_blow_up_is_monotone(kind, N, m, T):
    sol = ExactSolution(kind, N, m, T, 1.0 if kind == "king_kosov" else 0.0)
    r = np.geomspace(1e-6, 1e-2, 30)
    u = sol.u_radial(r, 0.5 if kind == "kosov_critical" else 0.0)
    assert np.all(np.diff(u) < 0)


def test_separable_gradient_slope():
    sol = ExactSolution("separable", 3, 0.1)
    r = np.geomspace(1e-6, 1e-2, 40)
    slope = np.polyfit(np.log(r), np.log(np.abs(sol.dum_radial(r, 0.0))), 1)[0]
    assert slope == pytest.approx(-(1.1) / 0.9, abs=1e-3)


def test_critical_gradient_slope():
    sol = ExactSolution("kosov_critical", 6, 0.5, T=2.0)
    # logarithmic corrections make the approach to -3 slow but monotone
    gaps = []
    for lo in (1e-5, 1e-8, 1e-11):
        r = np.geomspace(lo, 10 * lo, 20)
        slope = np.polyfit(np.log(r), np.log(np.abs(sol.dum_radial(r, 0.5))), 1)[0]
        gaps.append(abs(slope + 3.0))
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 0.1


def test_kosov_G_against_direct_quadrature():
    sol = ExactSolution("kosov_critical", 6, 0.5, T=2.0)
    direct, _ = integrate.quad(lambda s: float(sol.kosov_H(s, 0.5)), 0.0, 0.2, limit=200)
    assert float(sol.kosov_G(0.2, 0.5)) == pytest.approx(direct, rel=1e-8)


def test_kosov_H_negative_near_zero_and_asymptotic_ratio():
    sol = ExactSolution("kosov_critical", 6, 0.5, T=2.0)
    assert float(sol.kosov_H(1e-4, 0.5)) < 0
    ratio = float(sol.kosov_G(1e-6, 0.5) / sol.kosov_G_asymptotic(1e-6, 0.5))
    assert 0.9 <= ratio <= 1.1


def test_kosov_forcing_annulus_l2_decreases():
    # the L^2 mass of F on dyadic annuli shrinks towards the pole (only
    # polynomially, because of the logarithmic factor)
    sol = ExactSolution("kosov_critical", 6, 0.5, T=2.0)
    masses = []
    for j in range(2, 9):
        a, b = 2.0 ** -(j + 1), 2.0 ** -j
        val, _ = integrate.quad(lambda s: float(sol.kosov_forcing(s, 0.5)) ** 2 * s**5, a, b)
        masses.append(val)
    assert all(x > y for x, y in zip(masses, masses[1:]))


def test_simple_fields():
    c = constant_field(3, 0.5, 4.0)
    assert c.u(np.array([0.3, 0.7]), 0.0).shape == (2, 1)
    assert np.allclose(c.um(0.2, 0.0), 2.0)
    assert np.all(c.grad_norm(np.array([0.3]), 0.0) == 0)
    z = zero_field(3, 0.5)
    assert np.all(z.u_norm(np.array([0.1, 2.0]), 0.0) == 0)
    s = stack_fields([c, z])
    assert s.k == 2 and s.u(0.5, 0.0).shape == (2,)


def test_gradient_spike_field():
    f = gradient_spike_field(3, 0.5, 1.0, 0.05, 0.1, 0.5)
    assert float(f.grad_norm(1.0, 0.0)) == pytest.approx(2.0)
    h = 1e-6
    fd = (float(f.um(1.3 + h, 0.0)[0]) - float(f.um(1.3 - h, 0.0)[0])) / (2 * h)
    assert float(f.dum(1.3, 0.0)[0]) == pytest.approx(fd, rel=1e-6)
    with pytest.raises(DomainError):
        gradient_spike_field(3, 0.5, 1.0, 0.05, 1.0, 0.5)


def test_csv_round_trip(tmp_path):
    sol = ExactSolution("separable", 3, 0.1)
    r = np.linspace(0.5, 2.0, 7)
    t = np.linspace(0.0, 0.4, 5)
    sample = SampledRadial(3, 0.1, 1.0, r, t, sol.sample(r, t))
    text = write_csv(sample, tmp_path / "u.csv")
    assert text.startswith("# N=3 m=0.1 T=1.0\nr,t,u\n")
    back = read_csv(tmp_path / "u.csv")
    assert np.array_equal(back.u, sample.u) and np.array_equal(back.r, r)
    assert read_csv(text).N == 3
    with pytest.raises(DomainError):
        read_csv("r,t,u\n1,2,3\n")


def test_sampled_field_tracks_analytic_gradient():
    sol = ExactSolution("separable", 3, 0.1)
    r = np.linspace(0.5, 2.0, 201)
    t = np.linspace(0.0, 0.4, 21)
    fld = SampledRadial(3, 0.1, 1.0, r, t, sol.sample(r, t)).to_field()
    assert float(fld.dum(1.1, 0.2)[0]) == pytest.approx(float(sol.dum_radial(1.1, 0.2)), rel=1e-4)
