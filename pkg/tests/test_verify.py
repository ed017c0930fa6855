import math

import numpy as np
import pytest
from scipy import integrate as sint

from pmelab import verify as V
from pmelab.errors import DomainError
from pmelab.exponents import Params, lambda_r
from pmelab.geometry import one_sided
from pmelab.solutions import ExactSolution, PointField, RadialField, constant_field

P = Params(3, 0.1, 2.0)
Z = (np.array([1.0, 0.0, 0.0]), 0.0)


def _linear_field():
    # u = x_1 with m = 1: the gradient of u^m is e_1 everywhere
    def u(x, t):
        return np.asarray(x, float)[..., :1] + 0.0 * np.asarray(t)[..., None]

    def dum(x, t):
        x = np.asarray(x, float)
        shape = np.broadcast(x[..., 0], np.asarray(t)).shape
        out = np.zeros(shape + (1, 3))
        out[..., 0, 0] = 1.0
        return out

    return PointField(3, 1.0, u, dum)


def test_energy_closed_form_linear_field():
    rep = V.check_energy(_linear_field(), ((0.0, 0.0, 0.0), 0.0), 1.0, 0.5, 1.0, Params(3, 1.0, 2.0))
    # sup term: mean of x_1^2 over B_{1/2} is (1/4)/5, divided by (1/2)^2
    assert rep.extra["sup_term"] == pytest.approx(0.2, rel=1e-8)
    assert rep.extra["gradient_term"] == pytest.approx(1.0, rel=1e-12)
    # rhs: mean x_1^2 over B_1 = 1/5, weights 1/(1 - 1/4) and 1/(1/2)^2
    assert rep.rhs == pytest.approx(0.2 / 0.75 + 0.2 / 0.25, rel=1e-8)
    assert rep.anchor == V.ANCHORS["energy"]


def test_energy_rejects_bad_radii():
    with pytest.raises(DomainError):
        V.check_energy(constant_field(3, 0.1, 1.0), Z, 0.4, 0.1, 1.0, P)


def test_gluing_closed_form_with_forcing():
    # u = t solves u_t = Laplace u + div F with F = x / 3, m = 1
    N = 3
    fld = RadialField(N, 1.0,
                      lambda r, t: (np.asarray(t, float) + 0 * np.asarray(r))[..., None],
                      lambda r, t: (np.asarray(t, float) + 0 * np.asarray(r))[..., None],
                      lambda r, t: np.zeros(np.broadcast(np.asarray(r), np.asarray(t)).shape + (1,)),
                      lambda r, t: (np.asarray(r, float) / N + 0 * np.asarray(t))[..., None])
    rep = V.check_gluing(fld, ((0.0, 0.0, 0.0), 0.0), 1.0, 1.0, Params(3, 1.0, 2.0))
    assert rep.lhs == pytest.approx(2.0, rel=1e-12)
    # mean of |x|/3 over the unit ball is 1/4
    assert rep.rhs == pytest.approx(0.25, rel=1e-8)


@pytest.mark.parametrize("name", ["energy", "gluing", "poincare", "main"])
def test_constant_fields_have_zero_lhs(name):
    c = constant_field(3, 0.1, 2.0)
    rep = {
        "energy": lambda: V.check_energy(c, Z, 0.4, 0.3, 1.0, P, a=[2.0]),
        "gluing": lambda: V.check_gluing(c, Z, 0.4, 1.0, P),
        "poincare": lambda: V.check_poincare(c, Z, 0.4, P, theta=1.0, K=1e6),
        "main": lambda: V.check_main_estimate(c, Z, 0.4, 0.2, P),
    }[name]()
    assert rep.lhs == 0.0 and rep.ratio == 0.0


def test_coupling_failure_is_reported_not_raised():
    fld = ExactSolution("separable", 3, 0.1).field()
    for check in (V.check_poincare, V.check_revholder, V.check_theta_bound):
        rep = check(fld, Z, 0.1, P, theta=1e9)
        assert rep.status == "precondition-unmet" and not rep.finite
        assert "coupling" in rep.extra["message"] or "branch" in rep.extra["message"]


def test_theta_source_required():
    with pytest.raises(DomainError):
        V.check_poincare(constant_field(3, 0.1, 1.0), Z, 0.4, P)


def test_main_estimate_divergence_sides():
    fld = ExactSolution("separable", 3, 0.1).field()
    origin = (np.zeros(3), -0.5)
    # |Du^m|^{2+2 eps} ~ r^{-(2+2 eps)(1.1/0.9)} is not integrable in R^3 once eps >= 0.23
    lhs_div = V.check_main_estimate(fld, origin, 0.3, 0.5, P)
    assert lhs_div.status == "divergent" and lhs_div.extra["side"] == "lhs"
    # for small eps the left side is finite but |u|^2 ~ r^{-40/9} is not
    rhs_div = V.check_main_estimate(fld, origin, 0.3, 0.1, P)
    assert rhs_div.status == "divergent" and rhs_div.extra["side"] == "rhs"
    assert math.isfinite(rhs_div.lhs) and rhs_div.rhs == math.inf


def test_main_estimate_finite_away_from_pole():
    fld = ExactSolution("separable", 3, 0.1).field()
    rep = V.check_main_estimate(fld, Z, 0.2, 0.2, P)
    assert rep.finite and rep.lhs > 0 and rep.rhs > 0
    std = V.check_main_estimate(fld, Z, 0.2, 0.2, P, geometry="standard")
    assert std.finite and std.anchor == V.ANCHORS["main_standard"]
    with pytest.raises(DomainError):
        V.check_main_estimate(fld, Z, 0.2, 1.5, P)


@pytest.mark.parametrize("alpha", [0.3, 1.0, 2.5])
def test_power_inequality_constants_are_finite_and_stable(alpha):
    rep = V.check_power_inequalities(alpha, samples=20_000, seed=4)
    assert math.isfinite(rep.lhs) and rep.lhs >= 1.0
    consts = rep.extra["constants"]
    assert "two_sided" in consts
    assert ("difference_power" in consts) == (alpha >= 1)
    assert rep.seed == 4
    again = V.check_power_inequalities(alpha, samples=20_000, seed=4)
    assert again.lhs == rep.lhs


def test_power_inequality_at_alpha_one():
    # for alpha = 1 the two-sided quantities coincide
    rep = V.check_power_inequalities(1.0, samples=5_000, seed=1)
    assert rep.extra["constants"]["two_sided"]["all"] == pytest.approx(1.0, rel=1e-12)


def test_phi_and_v():
    fn = V.PhiTestFn(1.5, 0.5, 2.0, 0.4)
    s = np.array([0.0, 0.1, 0.8, 5.0])
    ph = V.phi(fn, s)
    assert ph[0] == pytest.approx(0.5 ** (2 * 0.4 * 1.5))
    assert ph[2] == pytest.approx(0.8**1.5)
    assert ph[3] == pytest.approx(2.0 ** (2 * 0.4 * 1.5))
    m = fn.m
    for u in (0.3, 1.2, 3.0):
        direct, _ = sint.quad(lambda x: float(V.phi(fn, x ** (2 * m / (m + 1)))), 0.0, u ** (m + 1),
                              points=[0.5 ** (m + 1), 2.0 ** (m + 1)], epsabs=0, epsrel=1e-12)
        assert float(V.v_of(fn, u)) == pytest.approx(direct, rel=1e-9)
    lo, hi = V.v_bounds(fn, np.array([0.3, 1.2, 1.9]))
    v = V.v_of(fn, np.array([0.3, 1.2, 1.9]))
    assert np.all(lo <= v) and np.all(v <= hi)
    with pytest.raises(DomainError):
        V.PhiTestFn(1.0, 2.0, 3.0, 0.5)


def test_v_degiorgi_sandwich():
    u = np.linspace(0.0, 4.0, 41)
    v = V.v_degiorgi(u, 1.0, 0.3)
    lo, hi = V.v_degiorgi_bounds(u, 1.0, 0.3)
    assert np.all(lo <= v * (1 + 1e-10)) and np.all(v <= hi * (1 + 1e-10))
    assert V.v_degiorgi(0.5, 1.0, 0.3) == 0.0


def test_energy_degiorgi_above_range_is_zero():
    sep = ExactSolution("separable", 3, 0.1, T=0.5).field()
    Q = one_sided((1.0, 0.0, 0.0), 0.0, 0.4, 0.4**11)
    rep = V.check_energy_degiorgi(sep, Q, 1e3, P)
    assert rep.lhs == 0.0 and rep.ratio == 0.0 and rep.extra["v_sandwich"]


def test_energy_phi_runs_on_separable_field():
    sep = ExactSolution("separable", 3, 0.1, T=0.5).field()
    Q = one_sided((1.0, 0.0, 0.0), 0.0, 0.4, 0.4**11)
    rep = V.check_energy_phi(sep, Q, V.PhiTestFn(1.0, 1.0, 2.0, 0.1), P)
    assert rep.finite and rep.lhs > 0 and rep.rhs > 0


def test_supbound_constant_field():
    c = 3.0
    Q = one_sided((1.0, 0.0, 0.0), 0.0, 0.5, 0.2)
    rep = V.check_supbound(constant_field(3, 0.1, c), Q, 0.5, P)
    assert rep.lhs == pytest.approx(c)
    b = V.supbound_branches(c**2, 0.0, 0.5, 0.2, 0.5, P)
    assert rep.rhs == max(b) and b[1] == 0.0
    assert b[0] == pytest.approx((2**5 * (0.25 / 0.2) ** 1.5 * c**2) ** (2 / lambda_r(P)), rel=1e-8)


def test_supbound_reports_pole():
    fld = ExactSolution("separable", 3, 0.1).field()
    rep = V.check_supbound(fld, one_sided((0.0, 0.0, 0.0), 0.0, 0.5, 0.2), 0.5, P)
    assert rep.status == "unbounded"
    with pytest.raises(DomainError):
        V.check_supbound(fld, one_sided((1.0, 0.0, 0.0), 0.0, 0.5, 0.2), 0.3, P)


def test_probe_separable_threshold():
    sol = ExactSolution("separable", 3, 0.1)
    res = V.probe_integrability(sol, J=60)
    target = 3 * 0.9 / 1.1 - 2
    assert res.reliable
    assert res.critical_eps == pytest.approx(target, rel=0.05)
    rep = res.report(sol)
    assert rep.rhs == pytest.approx(target)


def test_report_json_keys():
    rep = V.check_power_inequalities(2.0, samples=2_000, seed=9)
    d = rep.to_dict()
    for key in ("check", "anchor", "params", "lhs", "rhs", "ratio", "branch", "seed", "quadrature_error"):
        assert key in d
