"""Numerical checkers for the inequalities of the higher-integrability theory.

Each checker evaluates both sides of one inequality on a concrete field and
cylinder, with every unknown structural constant set to 1, and returns a
Report carrying the empirical ratio lhs/rhs. The constants of the theory are
not computable, so a checker never fails on a large ratio; callers compare
ratios across scales and configurations instead.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate as sp_integrate
from scipy import optimize, special

from .errors import DivergenceSignal, DomainError, PreconditionUnmet, UnboundedSignal
from .exponents import Params, lambda_r, lambda_s, q_exponent, scaling_deficit
from .geometry import (Cylinder, Integrand, QuadratureSpec, ball_volume, field_integrand,
                       integrate, intrinsic, make_rng, mean, one_sided, slice_mean,
                       sphere_area, standard, sup_norm)
from .report import PILOT_NOTE, Report, ratio_of, signal_report
from .solutions import ExactSolution, vpower

VERIFY_SPEC = QuadratureSpec(rtol=1e-8)

ANCHORS = {
    "power": "two-sided power-difference bounds and quasi-minimality of means of powers",
    "energy": "energy inequality on intrinsic cylinders",
    "energy_phi": "energy estimate with truncated power test functions (Moser iteration)",
    "energy_degiorgi": "energy estimate for (|u|^m - k^m)_+ (De Giorgi iteration)",
    "gluing": "gluing lemma for slicewise means",
    "poincare": "Sobolev-Poincare inequality under a sub-intrinsic coupling",
    "revholder": "reverse Hoelder inequality for the gradient",
    "theta_bound": "upper bound of the intrinsic scaling parameter theta",
    "supbound": "quantitative sup-estimate on one-sided cylinders",
    "main": "local higher integrability estimate on intrinsic cylinders",
    "main_standard": "local higher integrability estimate on standard parabolic cylinders",
    "probe": "gradient integrability threshold of explicit singular solutions",
}


def _anchor(key: str) -> str:
    return ANCHORS[key]


def _params_dict(params: Params, **more) -> dict:
    d = params.as_dict()
    d.update(more)
    d["note"] = PILOT_NOTE
    return d


def _val(res) -> float:
    return float(np.asarray(res.value))


# ---------------------------------------------------------------- test function phi

@dataclass(frozen=True)
class PhiTestFn:
    """phi_{alpha,k,l}(s): k^{2m alpha} below k^{2m}, s^alpha in between, l^{2m alpha} above l^{2m}."""

    alpha: float
    k: float
    ell: float
    m: float

    def __post_init__(self):
        if not (self.alpha >= 0 and 0 < self.k <= 1 and self.ell > 1 and self.m > 0):
            raise DomainError("need alpha >= 0, k in (0, 1], l > 1, m > 0")

    @property
    def C_phi(self) -> float:
        """sup tau phi'(tau)/phi(tau); equals alpha on the active branch."""
        return float(self.alpha)


def phi(fn: PhiTestFn, s):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise DomainError("phi is defined for s >= 0")
    m, a = fn.m, fn.alpha
    lo, hi = fn.k ** (2 * m), fn.ell ** (2 * m)
    return np.where(s <= lo, fn.k ** (2 * m * a), np.where(s < hi, s**a, fn.ell ** (2 * m * a)))


def phi_prime(fn: PhiTestFn, s):
    s = np.asarray(s, dtype=float)
    m, a = fn.m, fn.alpha
    lo, hi = fn.k ** (2 * m), fn.ell ** (2 * m)
    inside = (s > lo) & (s < hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = a * np.where(inside, s, 1.0) ** (a - 1)
    return np.where(inside, d, 0.0)


def v_of(fn: PhiTestFn, u_abs, m: Optional[float] = None):
    """v = int_0^{|u|^{m+1}} phi(s^{2m/(m+1)}) ds in closed form."""
    m = fn.m if m is None else m
    u = np.asarray(u_abs, dtype=float)
    if np.any(u < 0):
        raise DomainError("|u| must be non-negative")
    a, k, l = fn.alpha, fn.k, fn.ell
    e = m + 1 + 2 * m * a
    c = (m + 1) / e
    low = k ** (2 * m * a) * u ** (m + 1)
    mid = k**e + c * (u**e - k**e)
    top = k**e + c * (l**e - k**e) + l ** (2 * m * a) * (u ** (m + 1) - l ** (m + 1))
    return np.where(u <= k, low, np.where(u < l, mid, top))


def v_bounds(fn: PhiTestFn, u_abs):
    """Lower and upper bounds of v in terms of phi(|u|^{2m})."""
    m, a, k = fn.m, fn.alpha, fn.k
    u = np.asarray(u_abs, dtype=float)
    e = m + 1 + 2 * m * a
    ph = phi(fn, u ** (2 * m))
    if a == 0:
        lower = np.zeros_like(u)
    else:
        lower = (m + 1) / e * ph ** (e / (2 * m * a)) - k**e
    upper = u**e + k**e
    return lower, upper


def v_degiorgi(u_abs, k: float, m: float):
    """v = ((m+1)/m) int_{k^m}^{|u|^m} (y - k^m)_+^2 y^{1/m} dy (adaptive quadrature)."""
    u = np.atleast_1d(np.asarray(u_abs, dtype=float))
    out = np.zeros_like(u)
    km = k**m
    for i, ui in enumerate(u.ravel()):
        U = ui**m
        if U > km:
            val, _ = sp_integrate.quad(lambda y: (y - km) ** 2 * y ** (1 / m), km, U,
                                       epsabs=0.0, epsrel=1e-13, limit=200)
            out.flat[i] = (m + 1) / m * val
    return out if np.ndim(u_abs) else float(out[0])


def v_degiorgi_bounds(u_abs, k: float, m: float):
    u = np.asarray(u_abs, dtype=float)
    d = np.maximum(u**m - k**m, 0.0)
    return (m + 1) / (3 * m + 1) * d ** (3 + 1 / m), (m + 1) / (3 * m) * u * d**3


# ---------------------------------------------------------------- power inequalities

def check_power_inequalities(alpha: float, samples: int = 100_000, dim: int = 3, p: float = 2.0,
                             seed: int = 0, set_size: int = 12) -> Report:
    """Largest constants observed in the three elementary power inequalities.

    Pairs a, b are standard Gaussian vectors in R^dim. The quasi-minimality
    inequality is sampled with random point clouds B, random subsets A and
    random comparison vectors a. Constants are reported for the first tenth
    of the samples and for all samples, to expose their stability.
    """
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    rng = make_rng(seed)
    a = rng.standard_normal((samples, dim))
    b = rng.standard_normal((samples, dim))
    pa, pb = vpower(a, alpha), vpower(b, alpha)
    X = np.linalg.norm(pb - pa, axis=1)
    M = (np.linalg.norm(a, axis=1) + np.linalg.norm(b, axis=1)) ** (alpha - 1) * np.linalg.norm(b - a, axis=1)
    ok = (X > 0) & (M > 0)
    two_sided = np.maximum(X[ok] / M[ok], M[ok] / X[ok])
    cut = max(1, samples // 10)
    consts = {}
    consts["two_sided"] = (float(two_sided[: cut].max()), float(two_sided.max()))
    if alpha >= 1:
        D = np.linalg.norm(b - a, axis=1) ** alpha
        r = D[ok] / X[ok]
        consts["difference_power"] = (float(r[:cut].max()), float(r.max()))
    if p >= 1 and alpha >= 1 / p:
        n_sets = max(1, samples // 100)
        cloud = rng.standard_normal((n_sets, set_size, dim))
        sub = rng.random((n_sets, set_size)) < 0.5
        sub[:, 0] = True
        comp = rng.standard_normal((n_sets, dim))
        vals = []
        for j in range(n_sets):
            U = cloud[j]
            A = U[sub[j]]
            mA = A.mean(axis=0)
            w = vpower(U, alpha)
            lhs = np.mean(np.linalg.norm(w - vpower(mA, alpha), axis=1) ** p)
            rhs = np.mean(np.linalg.norm(w - vpower(comp[j], alpha), axis=1) ** p)
            if rhs > 0:
                vals.append(lhs / rhs * sub[j].sum() / set_size)
        vals = np.array(vals)
        c1 = max(1, vals.size // 10)
        consts["quasi_minimality"] = (float(vals[:c1].max()), float(vals.max()))
    worst = max(v[1] for v in consts.values())
    stab = max(abs(v[1] / v[0] - 1) for v in consts.values())
    return Report("power-ineq", _anchor("power"), worst, 1.0, worst,
                  {"alpha": alpha, "p": p, "dim": dim, "samples": samples, "note": PILOT_NOTE},
                  None, seed, 0.0, "ok",
                  {"constants": {k: {"tenth": v[0], "all": v[1]} for k, v in consts.items()},
                   "relative_change": stab})


# ---------------------------------------------------------------- helpers

def _is_constant(fn, cyl: Cylinder, radial: bool, n: int = 5) -> Optional[np.ndarray]:
    """The common value when fn is constant on a probe grid of the cylinder, else None."""
    ts = np.linspace(cyl.t_lo, cyl.t_hi, n)
    if radial:
        d = cyl.dist_to_origin()
        rs = np.linspace(max(d - cyl.radius, 0.0) + 1e-3 * cyl.radius, d + cyl.radius, n)
        pts = [(np.array(r), np.array(t)) for r in rs for t in ts]
    else:
        dirs = np.eye(cyl.N)
        xs = [cyl.center + s * cyl.radius * dv for dv in dirs for s in (-0.9, 0.0, 0.5)]
        pts = [(np.asarray(x), np.array(t)) for x in xs for t in ts]
    vals = [np.asarray(fn(a, t), dtype=float) for a, t in pts]
    first = vals[0]
    if all(np.array_equal(v, first) for v in vals):
        return first
    return None


def _cyl_mean(fn, cyl: Cylinder, radial: bool, singular: bool, spec: QuadratureSpec,
              vector: bool = False, splits=()):
    """(mean value, error) of fn over the cylinder; exact for probe-constant fn."""
    const = _is_constant(fn, cyl, radial)
    if const is not None:
        return const, 0.0
    res = mean(Integrand(fn, radial, singular, "", vector), cyl, spec, splits)
    return np.asarray(res.value), float(res.error)


def _sup_over_time(fn: Callable[[float], float], t_lo: float, t_hi: float, n: int = 17) -> float:
    ts = np.linspace(t_lo, t_hi, n)
    vals = np.array([fn(float(t)) for t in ts])
    j = int(np.argmax(vals))
    best = float(vals[j])
    if np.all(vals == vals[0]):
        return best
    a, b = ts[max(j - 1, 0)], ts[min(j + 1, n - 1)]
    if b > a:
        res = optimize.minimize_scalar(lambda t: -fn(float(t)), bounds=(a, b), method="bounded",
                                       options={"xatol": 1e-10 * max(1.0, abs(b - a))})
        best = max(best, float(-res.fun))
    return best


def _singular(fld) -> bool:
    return bool(getattr(fld, "singular_at_origin", False))


def _forcing_term(fld, cyl: Cylinder, params: Params, spec: QuadratureSpec, power: float = 1.0):
    """(mean |F|^{2p})^{power/p}; zero without forcing."""
    if not fld.has_forcing():
        return 0.0, 0.0
    if not math.isfinite(params.p):
        raise DomainError("a forcing term needs a finite integrability exponent p")
    res = mean(field_integrand(fld, "|F|", 2 * params.p), cyl, spec)
    v = _val(res)
    return v ** (power / params.p), float(res.error)


def _grad_mean(fld, cyl, power, spec):
    g = field_integrand(fld, "|Du|", power)
    val, err = _cyl_mean(g.fn, cyl, fld.radial, _singular(fld), spec)
    return float(val), err


# ---------------------------------------------------------------- energy on intrinsic cylinders

def check_energy(fld, z_o, rho: float, r_in: float, theta: float, params: Params, a=None,
                 spec: QuadratureSpec = VERIFY_SPEC) -> Report:
    """Both sides of the energy inequality on Q_r^(theta) inside Q_rho^(theta).

    lhs = sup_t mean_{B_r} |u^{(1+m)/2} - a^{(1+m)/2}|^2 / r^{(1+m)/m} + mean_{Q_r} |Du^m|^2
    rhs = mean_{Q_rho} [ |u^{(1+m)/2} - a^{(1+m)/2}|^2 / (rho^{(1+m)/m} - r^{(1+m)/m})
                         + |u^m - a^m|^2 / (theta^{2m(m-1)/(1+m)} (rho - r)^2) + |F|^2 ]
    The default a is the slice mean of u over B_rho^(theta) at t_o.
    """
    m = params.m
    if not (rho / 2 <= r_in < rho):
        raise DomainError("need r in [rho/2, rho)")
    x_o, t_o = z_o
    x_o = tuple(float(v) for v in np.atleast_1d(x_o))
    big = intrinsic(x_o, t_o, rho, theta, m)
    small = intrinsic(x_o, t_o, r_in, theta, m)
    if a is None:
        a = np.asarray(slice_mean(field_integrand(fld, "u"), x_o, big.radius, t_o, spec).value)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    h = (1 + m) / 2
    ah, am = vpower(a, h), vpower(a, m)
    radial = fld.radial

    def d_half(x, t):
        w = vpower(fld.u(x, t), h) - ah
        return np.sum(w * w, axis=-1)

    def d_m(x, t):
        w = fld.um(x, t) - am
        return np.sum(w * w, axis=-1)

    slice_fn = Integrand(d_half, radial, _singular(fld))
    r_pow = r_in ** ((1 + m) / m)

    def slice_val(t):
        return float(np.asarray(slice_mean(slice_fn, x_o, small.radius, t, spec).value)) / r_pow

    sup_term = _sup_over_time(slice_val, small.t_lo, small.t_hi)
    grad_term, e1 = _grad_mean(fld, small, 2.0, spec)
    lhs = sup_term + grad_term
    c1 = rho ** ((1 + m) / m) - r_pow
    c2 = theta ** (2 * m * (m - 1) / (1 + m)) * (rho - r_in) ** 2
    F2 = (lambda x, t: fld.F_norm(x, t) ** 2) if fld.has_forcing() else (lambda x, t: 0.0 * d_m(x, t))
    rhs_fn = lambda x, t: d_half(x, t) / c1 + d_m(x, t) / c2 + F2(x, t)
    rhs, e2 = _cyl_mean(rhs_fn, big, radial, _singular(fld), spec)
    rhs = float(rhs)
    return Report("energy", _anchor("energy"), lhs, rhs, None,
                  _params_dict(params, rho=rho, r=r_in, theta=theta, a=a.tolist(),
                               cylinder=big.describe()),
                  None, None, e1 + e2, "ok",
                  {"sup_term": sup_term, "gradient_term": grad_term})


# ---------------------------------------------------------------- cut-off integrals (appendix estimates)

@dataclass(frozen=True)
class ZetaProfile:
    """zeta(x, t) = psi(|x - x_o|) chi(t), both piecewise linear.

    psi = 1 on [0, inner R], linear down to 0 at R; chi = 0 at t_o - S,
    linear up to 1 at t_o - ramp S, then 1 up to t_o. Hence
    |grad zeta| <= 1/((1 - inner) R) and |d_t zeta| <= 1/((1 - ramp) S).
    """

    inner: float = 0.5
    ramp: float = 0.5

    def __post_init__(self):
        if not (0 <= self.inner < 1 and 0 <= self.ramp < 1):
            raise DomainError("profile fractions must lie in [0, 1)")

    def psi(self, s, R):
        s = np.asarray(s, dtype=float)
        return np.clip((R - s) / ((1 - self.inner) * R), 0.0, 1.0)

    def dpsi(self, s, R):
        s = np.asarray(s, dtype=float)
        return np.where((s > self.inner * R) & (s < R), 1.0 / ((1 - self.inner) * R), 0.0)

    def chi(self, t, t_o, S):
        t = np.asarray(t, dtype=float)
        return np.clip((t - (t_o - S)) / ((1 - self.ramp) * S), 0.0, 1.0)

    def dchi(self, t, t_o, S):
        t = np.asarray(t, dtype=float)
        return np.where((t > t_o - S) & (t < t_o - self.ramp * S), 1.0 / ((1 - self.ramp) * S), 0.0)


def _jacobi_rule(N: int, n: int):
    a = (N - 3) / 2.0
    if a == 0:
        x, w = np.polynomial.legendre.leggauss(n)
    else:
        x, w = special.roots_jacobi(n, a, a)
    return x, w


class _CentredRule:
    """Quadrature over B_R(x_o) for integrands of (|x|, |x - x_o|).

    Polar coordinates about x_o with the polar axis along x_o: the volume
    element is s^{N-1} |S^{N-2}| (1 - c^2)^{(N-3)/2} ds dc, so a Gauss-Jacobi
    rule in c = cos(angle) and Gauss-Legendre panels in s (split at the kink
    of the cut-off) integrate exactly in the angular structure.
    """

    def __init__(self, x_o, R: float, breaks=(), n_s: int = 48, n_c: int = 48):
        x_o = np.atleast_1d(np.asarray(x_o, dtype=float))
        N = x_o.size
        if N < 2:
            raise DomainError("the centred rule needs N >= 2")
        d = float(np.linalg.norm(x_o))
        cuts = [0.0] + sorted(b for b in breaks if 0 < b < R) + [R]
        ss, ws = [], []
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            x, w = np.polynomial.legendre.leggauss(n_s)
            ss.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
            ws.append(0.5 * (hi - lo) * w)
        s = np.concatenate(ss)
        w_s = np.concatenate(ws) * s ** (N - 1)
        c, w_c = _jacobi_rule(N, n_c)
        w_c = w_c * sphere_area(N - 1)
        self.s = s[:, None] * np.ones_like(c)[None, :]
        self.r = np.sqrt(np.maximum(d * d + s[:, None] ** 2 + 2 * d * s[:, None] * c[None, :], 0.0))
        self.w = w_s[:, None] * w_c[None, :]
        self.R = R
        self.N = N

    def integrate(self, fn: Callable) -> float:
        """fn(r_abs, s_centre) -> values of the grid shape."""
        return float(np.sum(self.w * np.asarray(fn(self.r, self.s), dtype=float)))


def _time_rule(t_lo, t_hi, breaks=(), n: int = 16):
    cuts = [t_lo] + sorted(b for b in breaks if t_lo < b < t_hi) + [t_hi]
    ts, ws = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        x, w = np.polynomial.legendre.leggauss(n)
        ts.append(0.5 * (b - a) * x + 0.5 * (b + a))
        ws.append(0.5 * (b - a) * w)
    return np.concatenate(ts), np.concatenate(ws)


def _require_radial(fld):
    if not fld.radial:
        raise DomainError("the cut-off energy checkers need a radial field")


def _zeta_setup(Q: Cylinder, zeta: ZetaProfile, spec_nodes: int = 48):
    R, S, t_o = Q.radius, Q.duration, Q.t_hi
    rule = _CentredRule(Q.x_o, R, (zeta.inner * R,), spec_nodes, spec_nodes)
    ts, wt = _time_rule(Q.t_lo, Q.t_hi, (t_o - zeta.ramp * S,))
    return R, S, t_o, rule, ts, wt


def check_energy_phi(fld, Q: Cylinder, fn: PhiTestFn, params: Params,
                     zeta: ZetaProfile = ZetaProfile(), n_nodes: int = 48) -> Report:
    """Both sides of the energy estimate with test function Phi = phi_{alpha,k,l} (nu = L = 1, C_1 = C_2 = 1).

    Q is a one-sided cylinder B_R(x_o) x (t_o - S, t_o].
    """
    _require_radial(fld)
    m = params.m
    R, S, t_o, rule, ts, wt = _zeta_setup(Q, zeta, n_nodes)
    psi = zeta.psi(rule.s, R)
    dpsi = zeta.dpsi(rule.s, R)

    def u_abs(t):
        return fld.u_norm(rule.r, np.full_like(rule.r, t))

    def slice_lhs(t):
        ua = u_abs(t)
        return rule.integrate(lambda r, s: v_of(fn, ua, m) * psi**2) * float(zeta.chi(t, t_o, S)) ** 2

    sup_v = _sup_over_time(slice_lhs, Q.t_lo, Q.t_hi, 33) / (m + 1)
    grad_part = 0.0
    r1 = r2 = r3 = 0.0
    for t, w in zip(ts, wt):
        tt = np.full_like(rule.r, t)
        ua = fld.u_norm(rule.r, tt)
        g2 = fld.grad_norm(rule.r, tt) ** 2
        ph = phi(fn, ua ** (2 * m))
        ch = float(zeta.chi(t, t_o, S))
        dch = float(zeta.dchi(t, t_o, S))
        z2 = (psi * ch) ** 2
        grad_part += w * rule.integrate(lambda r, s: g2 * ph * z2)
        r1 += w * rule.integrate(lambda r, s: ua ** (2 * m) * ph * (dpsi * ch) ** 2)
        r2 += w * rule.integrate(lambda r, s: v_of(fn, ua, m) * psi**2 * 2 * ch * dch)
        if fld.has_forcing():
            F2 = fld.F_norm(rule.r, tt) ** 2
            dph = phi_prime(fn, ua ** (2 * m))
            r3 += w * rule.integrate(lambda r, s: F2 * (ph + ua ** (2 * m) * dph) * z2)
    lhs = sup_v + 0.5 * grad_part
    rhs = r1 + 2 / (m + 1) * r2 + (1 + fn.C_phi) * r3
    return Report("energy-phi", _anchor("energy_phi"), lhs, rhs, None,
                  _params_dict(params, phi=asdict(fn), zeta=asdict(zeta), cylinder=Q.describe(),
                               nodes=n_nodes),
                  None, None, 0.0, "ok",
                  {"sup_term": sup_v, "gradient_term": 0.5 * grad_part,
                   "rhs_terms": [r1, 2 / (m + 1) * r2, (1 + fn.C_phi) * r3]})


def _grad_abs_power(fld, r, t):
    """|d_r |u|^m| from the radial derivative of the vector power u^m."""
    um = fld.um(r, t)
    dum = fld.dum(r, t)
    n = np.sqrt(np.sum(um * um, axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.abs(np.sum(um * dum, axis=-1)) / n
    return np.where(n > 0, g, 0.0)


def check_energy_degiorgi(fld, Q: Cylinder, k: float, params: Params,
                          zeta: ZetaProfile = ZetaProfile(), n_nodes: int = 48,
                          sandwich_samples: int = 64) -> Report:
    """Both sides of the De Giorgi energy estimate for (|u|^m - k^m)_+ with C = 1.

    The two-sided bound of v is checked pointwise at sample values of |u|
    drawn from the cylinder and recorded in the report.
    """
    _require_radial(fld)
    if k < 0:
        raise DomainError("k must be non-negative")
    m = params.m
    km = k**m
    R, S, t_o, rule, ts, wt = _zeta_setup(Q, zeta, n_nodes)
    psi = zeta.psi(rule.s, R)
    dpsi = zeta.dpsi(rule.s, R)
    e = 3 + 1 / m

    def slice_lhs(t):
        ua = fld.u_norm(rule.r, np.full_like(rule.r, t))
        d = np.maximum(ua**m - km, 0.0)
        return rule.integrate(lambda r, s: d**e * psi**2) * float(zeta.chi(t, t_o, S)) ** 2

    sup_term = _sup_over_time(slice_lhs, Q.t_lo, Q.t_hi, 33)
    grad_part = r1 = r2 = r3 = 0.0
    for t, w in zip(ts, wt):
        tt = np.full_like(rule.r, t)
        ua = fld.u_norm(rule.r, tt)
        d = np.maximum(ua**m - km, 0.0)
        ind = ua > k
        ch = float(zeta.chi(t, t_o, S))
        dch = float(zeta.dchi(t, t_o, S))
        z2 = (psi * ch) ** 2
        gd = 2 * d * _grad_abs_power(fld, rule.r, tt)
        grad_part += w * rule.integrate(lambda r, s: gd**2 * z2)
        r1 += w * rule.integrate(lambda r, s: np.where(ind, ua ** (4 * m), 0.0) * (dpsi * ch) ** 2)
        r2 += w * rule.integrate(lambda r, s: ua * d**3 * psi**2 * 2 * ch * dch)
        if fld.has_forcing():
            F2 = fld.F_norm(rule.r, tt) ** 2
            r3 += w * rule.integrate(lambda r, s: np.where(ind, F2 * ua ** (2 * m), 0.0) * z2)
    lhs = sup_term + grad_part
    rhs = r1 + r2 + r3
    # pointwise sandwich of v on values of |u| seen in the cylinder
    samp = np.quantile(fld.u_norm(rule.r, np.full_like(rule.r, 0.5 * (Q.t_lo + Q.t_hi))).ravel(),
                       np.linspace(0, 1, sandwich_samples))
    v = v_degiorgi(samp, k, m)
    lo, hi = v_degiorgi_bounds(samp, k, m)
    sandwich = bool(np.all(lo <= v * (1 + 1e-10) + 1e-300) and np.all(v <= hi * (1 + 1e-10) + 1e-300))
    return Report("energy-degiorgi", _anchor("energy_degiorgi"), lhs, rhs, None,
                  _params_dict(params, k=k, zeta=asdict(zeta), cylinder=Q.describe(), nodes=n_nodes),
                  None, None, 0.0, "ok",
                  {"sup_term": sup_term, "gradient_term": grad_part, "rhs_terms": [r1, r2, r3],
                   "v_sandwich": sandwich})


# ---------------------------------------------------------------- gluing

def check_gluing(fld, z_o, rho: float, theta: float, params: Params, n_radii: int = 16,
                 n_times: int = 8, spec: QuadratureSpec = VERIFY_SPEC) -> Report:
    """Grid surrogate of the gluing lemma.

    lhs = min over rho_hat in [rho/2, rho] of max over time pairs in
    Lambda_rho of |<u>(t2) - <u>(t1)| on B_rho_hat^(theta);
    rhs = theta^{m(1-m)/(1+m)} rho^{1/m} mean_{Q_rho^(theta)} (|Du^m| + |F|).
    """
    m = params.m
    x_o, t_o = z_o
    x_o = tuple(float(v) for v in np.atleast_1d(x_o))
    cyl = intrinsic(x_o, t_o, rho, theta, m)
    scale = theta ** (m * (m - 1) / (1 + m))
    times = np.linspace(cyl.t_lo, cyl.t_hi, n_times)
    uf = field_integrand(fld, "u")
    best = math.inf
    best_r = None
    for rh in np.linspace(rho / 2, rho, n_radii):
        means = np.array([np.atleast_1d(np.asarray(slice_mean(uf, x_o, scale * rh, float(t), spec).value))
                          for t in times])
        diff = means[:, None, :] - means[None, :, :]
        worst = float(np.max(np.sqrt(np.sum(diff * diff, axis=-1))))
        if worst < best:
            best, best_r = worst, float(rh)
    if fld.has_forcing():
        fn = lambda x, t: fld.grad_norm(x, t) + fld.F_norm(x, t)
    else:
        fn = fld.grad_norm
    val, err = _cyl_mean(fn, cyl, fld.radial, _singular(fld), spec, splits=(t_o,))
    rhs = theta ** (m * (1 - m) / (1 + m)) * rho ** (1 / m) * float(val)
    return Report("gluing", _anchor("gluing"), best, rhs, None,
                  _params_dict(params, rho=rho, theta=theta, cylinder=cyl.describe(),
                               radius_grid=n_radii, time_grid=n_times),
                  None, None, err, "ok", {"rho_hat": best_r})


# ---------------------------------------------------------------- couplings on Q_2rho

@dataclass
class Coupling:
    sub_intrinsic: bool
    branch: Optional[str]
    values: dict


def coupling(fld, z_o, rho: float, theta: float, params: Params, K: float = 1.0,
             rel: float = 1e-6, spec: QuadratureSpec = VERIFY_SPEC) -> Coupling:
    """Evaluate the sub-intrinsic coupling on Q_2rho and the two super-intrinsic branches on Q_rho."""
    m, r = params.m, params.r
    x_o, t_o = z_o
    q2 = intrinsic(x_o, t_o, 2 * rho, theta, m)
    q1 = intrinsic(x_o, t_o, rho, theta, m)
    ur = field_integrand(fld, "|u|", r)
    sub_lhs = float(_cyl_mean(ur.fn, q2, fld.radial, _singular(fld), spec)[0]) / (2 * rho) ** (r / m)
    sub_rhs = K ** (r / (1 + m)) * theta ** (2 * r * m / (1 + m))
    b1_lhs = theta ** (2 * r * m / (1 + m))
    b1_rhs = K ** (r / (1 + m)) * float(_cyl_mean(ur.fn, q1, fld.radial, _singular(fld), spec)[0]) / rho ** (r / m)
    g2, _ = _grad_mean(fld, q1, 2.0, spec)
    f1, _ = _forcing_term(fld, q1, params, spec)
    b2_lhs = theta ** (2 * m)
    b2_rhs = K * (g2 + f1)
    branch = None
    if b1_lhs <= b1_rhs * (1 + rel):
        branch = "super-intrinsic-1"
    elif b2_lhs <= b2_rhs * (1 + rel):
        branch = "super-intrinsic-2"
    return Coupling(sub_lhs <= sub_rhs * (1 + rel), branch,
                    {"sub": [sub_lhs, sub_rhs], "branch1": [b1_lhs, b1_rhs],
                     "branch2": [b2_lhs, b2_rhs], "K": K})


def _require_coupling(cp: Coupling, need_branch1: bool = False):
    if not cp.sub_intrinsic:
        raise PreconditionUnmet("sub-intrinsic coupling fails on Q_2rho", cp.values)
    if cp.branch is None or (need_branch1 and cp.branch != "super-intrinsic-1"):
        raise PreconditionUnmet("no admissible super-intrinsic branch on Q_rho", cp.values)


def _theta_of(system, rho, theta):
    if theta is not None:
        return float(theta)
    if system is None:
        raise DomainError("supply a ThetaSystem or an explicit theta")
    return system.theta_at(rho)


def _unmet_report(name, key, exc, params, seed=None):
    rep = signal_report(name, _anchor(key), "precondition-unmet", str(exc), _params_dict(params), seed)
    rep.extra["details"] = getattr(exc, "details", {})
    return rep


def _centred_sq_mean(fld, cyl: Cylinder, h: float, spec: QuadratureSpec):
    """mean |u^h - (u^h)_Q|^2 over the cylinder, exact 0 for probe-constant u."""
    w = lambda x, t: vpower(fld.u(x, t), h)
    c, e1 = _cyl_mean(w, cyl, fld.radial, _singular(fld), spec, vector=True)
    c = np.atleast_1d(c)

    def sq(x, t):
        d = w(x, t) - c
        return np.sum(d * d, axis=-1)

    val, e2 = _cyl_mean(sq, cyl, fld.radial, _singular(fld), spec)
    return float(val), e1 + e2


def check_poincare(fld, z_o, rho: float, params: Params, system=None, theta: Optional[float] = None,
                   K: float = 1.0, r1: Optional[float] = None, r2: Optional[float] = None,
                   spec: QuadratureSpec = VERIFY_SPEC) -> Report:
    """Sobolev-Poincare inequality on Q_r1^(theta) with q = rN/(rN + lambda_r)."""
    m = params.m
    theta = _theta_of(system, rho, theta)
    r1 = rho if r1 is None else r1
    r2 = 2 * rho if r2 is None else r2
    if not (rho <= r1 < r2 <= 2 * rho):
        raise DomainError("need rho <= r1 < r2 <= 2 rho")
    try:
        cp = coupling(fld, z_o, rho, theta, params, K, spec=spec)
        _require_coupling(cp)
    except PreconditionUnmet as exc:
        return _unmet_report("poincare", "poincare", exc, params)
    x_o, t_o = z_o
    q = q_exponent(params)
    c1 = intrinsic(x_o, t_o, r1, theta, m)
    c2 = intrinsic(x_o, t_o, r2, theta, m)
    c2r = intrinsic(x_o, t_o, 2 * rho, theta, m)
    lhs, e1 = _centred_sq_mean(fld, c1, (1 + m) / 2, spec)
    lhs /= r1 ** ((1 + m) / m)
    g, e2 = _grad_mean(fld, c2, 2 * q, spec)
    f, e3 = _forcing_term(fld, c2r, params, spec)
    rhs = (r2 / (r2 - r1)) ** ((1 + m) / m) * g ** (1 / q) + f
    return Report("poincare", _anchor("poincare"), lhs, rhs, None,
                  _params_dict(params, rho=rho, theta=theta, K=K, q=q, r1=r1, r2=r2,
                               cylinder=c1.describe()),
                  cp.branch, None, e1 + e2 + e3, "ok", {"coupling": cp.values})


def check_revholder(fld, z_o, rho: float, params: Params, system=None, theta: Optional[float] = None,
                    K: float = 1.0, spec: QuadratureSpec = VERIFY_SPEC) -> Report:
    """mean_{Q_rho} |Du^m|^2 against [mean_{Q_2rho} |Du^m|^{2q}]^{1/q} + [mean |F|^{2p}]^{1/p}."""
    m = params.m
    theta = _theta_of(system, rho, theta)
    try:
        cp = coupling(fld, z_o, rho, theta, params, K, spec=spec)
        _require_coupling(cp)
    except PreconditionUnmet as exc:
        return _unmet_report("revholder", "revholder", exc, params)
    x_o, t_o = z_o
    q = q_exponent(params)
    c1 = intrinsic(x_o, t_o, rho, theta, m)
    c2 = intrinsic(x_o, t_o, 2 * rho, theta, m)
    lhs, e1 = _grad_mean(fld, c1, 2.0, spec)
    g, e2 = _grad_mean(fld, c2, 2 * q, spec)
    f, e3 = _forcing_term(fld, c2, params, spec)
    rhs = g ** (1 / q) + f
    return Report("revholder", _anchor("revholder"), lhs, rhs, None,
                  _params_dict(params, rho=rho, theta=theta, K=K, q=q, cylinder=c1.describe()),
                  cp.branch, None, e1 + e2 + e3, "ok", {"coupling": cp.values})


def check_theta_bound(fld, z_o, rho: float, params: Params, system=None, theta: Optional[float] = None,
                      spec: QuadratureSpec = VERIFY_SPEC) -> Report:
    """theta^m against 2^{-1/2}[mean_{Q_rho/2} |u|^{1+m}/(rho/2)^{(1+m)/m}]^{1/2} + [mean |Du^m|^2 + F-term]^{1/2}.

    Requires the sub-intrinsic coupling and the first super-intrinsic branch with K = 1.
    """
    m = params.m
    theta = _theta_of(system, rho, theta)
    try:
        cp = coupling(fld, z_o, rho, theta, params, 1.0, spec=spec)
        _require_coupling(cp, need_branch1=True)
    except PreconditionUnmet as exc:
        return _unmet_report("theta-bound", "theta_bound", exc, params)
    x_o, t_o = z_o
    ch = intrinsic(x_o, t_o, rho / 2, theta, m)
    c2 = intrinsic(x_o, t_o, 2 * rho, theta, m)
    u1m = field_integrand(fld, "|u|", 1 + m)
    a, e1 = _cyl_mean(u1m.fn, ch, fld.radial, _singular(fld), spec)
    a = float(a) / (rho / 2) ** ((1 + m) / m)
    g, e2 = _grad_mean(fld, c2, 2.0, spec)
    f, e3 = _forcing_term(fld, c2, params, spec)
    rhs = math.sqrt(a / 2) + math.sqrt(g + f)
    return Report("theta-bound", _anchor("theta_bound"), theta**m, rhs, None,
                  _params_dict(params, rho=rho, theta=theta, cylinder=c2.describe()),
                  cp.branch, None, e1 + e2 + e3, "ok",
                  {"coupling": cp.values, "u_term": math.sqrt(a / 2), "gradient_term": math.sqrt(g + f)})


# ---------------------------------------------------------------- sup bound

def supbound_branches(u_mean_r: float, F_mean_2p: float, rho: float, vartheta: float,
                      sigma: float, params: Params):
    """The three values whose maximum bounds sup |u| (constant C = 1)."""
    N, m, r, p = params.N, params.m, params.r, params.p
    b1 = ((1 - sigma) ** (-(N + 2)) * (rho**2 / vartheta) ** (N / 2) * u_mean_r) ** (2 / lambda_r(params))
    if F_mean_2p > 0:
        lam_p = lambda_s(N, m, p * (1 + m))
        b2 = ((vartheta / rho**2) ** (p - N / 2) * F_mean_2p) ** (2 / lam_p)
    else:
        b2 = 0.0
    b3 = (vartheta / rho**2) ** (1 / (1 - m))
    return b1, b2, b3


def check_supbound(fld, Q: Cylinder, sigma: float, params: Params,
                   spec: QuadratureSpec = VERIFY_SPEC, grid: int = 65) -> Report:
    """sup over Q_{sigma rho, sigma vartheta} against the maximum of the three branch values.

    Q is the one-sided cylinder B_rho(x_o) x (t_o - vartheta, t_o].
    """
    if not (0.5 <= sigma < 1):
        raise DomainError("sigma must lie in [1/2, 1)")
    if params.m >= 1:
        raise DomainError("the sup-estimate needs m < 1")
    rho, vartheta = Q.radius, Q.duration
    inner = one_sided(Q.x_o, Q.t_hi, sigma * rho, sigma * vartheta)
    try:
        lhs = float(sup_norm(field_integrand(fld, "u"), inner, grid).value)
    except UnboundedSignal as exc:
        return signal_report("supbound", _anchor("supbound"), "unbounded", str(exc),
                             _params_dict(params, sigma=sigma, cylinder=Q.describe()))
    ur, e1 = _cyl_mean(field_integrand(fld, "|u|", params.r).fn, Q, fld.radial, _singular(fld), spec)
    Fm, e2 = (0.0, 0.0)
    if fld.has_forcing():
        if not math.isfinite(params.p):
            raise DomainError("a forcing term needs a finite p")
        Fm, e2 = _cyl_mean(lambda x, t: (rho * fld.F_norm(x, t)) ** (2 * params.p), Q,
                           fld.radial, _singular(fld), spec)
    b = supbound_branches(float(ur), float(Fm), rho, vartheta, sigma, params)
    j = int(np.argmax(b))
    return Report("supbound", _anchor("supbound"), lhs, b[j], None,
                  _params_dict(params, sigma=sigma, cylinder=Q.describe()),
                  ("u-mean", "forcing", "threshold")[j], None, e1 + e2, "ok",
                  {"branches": list(b)})


# ---------------------------------------------------------------- integrability probe

@dataclass
class ProbeResult:
    critical_s: float
    critical_eps: float
    s_grid: list
    slopes: list
    r_squared: list
    reliable: bool
    annuli: tuple

    def report(self, sol: ExactSolution) -> Report:
        target = None
        if sol.kind == "separable":
            target = sol.N * (1 - sol.m) / (1 + sol.m) - 2
        return Report("probe", _anchor("probe"), self.critical_eps,
                      target if target is not None else 0.0, None,
                      {"kind": sol.kind, "N": sol.N, "m": sol.m, "T": sol.T, "A": sol.A,
                       "s_grid": self.s_grid, "annuli": list(self.annuli)},
                      None, None, 0.0, "ok",
                      {"critical_s": self.critical_s, "slopes": self.slopes,
                       "r_squared": self.r_squared, "reliable": self.reliable})


def annulus_log2_integrals(sol: ExactSolution, s: float, j_range: Sequence[int], t_window,
                           n_r: int = 32, n_t: int = 8) -> np.ndarray:
    """log2 a_j, a_j = int over {2^{-j-1} <= |x| <= 2^{-j}} x t_window of |grad u^m|^s.

    Evaluated in log space so that deep annuli neither overflow nor underflow.
    """
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    tt, wt = _time_rule(t_window[0], t_window[1], (), n_t)
    area = sphere_area(sol.N)
    out = []
    for j in j_range:
        a, b = 2.0 ** (-j - 1), 2.0**-j
        r = 0.5 * (b - a) * xr + 0.5 * (b + a)
        logw = np.log(0.5 * (b - a) * wr * area) + (sol.N - 1) * np.log(r)
        logg = s * np.log(np.abs(sol.dum_radial(r[None, :], tt[:, None])))
        terms = logg + logw[None, :] + np.log(wt)[:, None]
        out.append(special.logsumexp(terms) / math.log(2.0))
    return np.array(out)


def probe_integrability(sol: ExactSolution, s_grid: Optional[Sequence[float]] = None,
                        J: int = 120, j0: int = 4, t_window=None) -> ProbeResult:
    """Locate the exponent s at which the dyadic annulus series of |grad u^m|^s stops converging.

    For each s the log-magnitudes log2 a_j are fitted linearly in j; the
    fitted slope is negative for convergent series. critical_s is the root
    of the slope as a function of s (linear interpolation on s_grid).
    """
    if J < 10:
        raise DomainError("need at least 10 annuli")
    if s_grid is None:
        s_grid = np.linspace(1.5, 3.5, 9)
    s_grid = [float(s) for s in s_grid]
    if t_window is None:
        if sol.kind == "kosov_critical":
            t_window = (0.25 * sol.T / 2, 0.75 * sol.T / 2)
        else:
            t_window = (sol.T - 0.75 * sol.T, sol.T - 0.25 * sol.T)
    js = list(range(j0, j0 + J))
    if sol.kind == "kosov_critical" and 2.0**-js[0] >= sol.R:
        raise DomainError("the first annulus must lie inside the ball of the critical profile")
    slopes, r2s = [], []
    jj = np.array(js, dtype=float)
    for s in s_grid:
        la = annulus_log2_integrals(sol, s, js, t_window)
        coef = np.polyfit(jj, la, 1)
        fit = np.polyval(coef, jj)
        ss_res = float(np.sum((la - fit) ** 2))
        ss_tot = float(np.sum((la - la.mean()) ** 2))
        r2s.append(1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0)
        slopes.append(float(coef[0]))
    sl = np.array(slopes)
    idx = np.nonzero(np.diff(np.sign(sl)) != 0)[0]
    if idx.size == 0:
        raise DomainError("the slope does not change sign on the exponent grid; widen it")
    i = int(idx[0])
    s_c = s_grid[i] + (s_grid[i + 1] - s_grid[i]) * (-sl[i]) / (sl[i + 1] - sl[i])
    # the fit quality that matters is the one at the bracketing exponents
    return ProbeResult(float(s_c), float(s_c - 2.0), s_grid, slopes, r2s,
                       bool(min(r2s[i], r2s[i + 1]) >= 0.99), (js[0], js[-1]))


# ---------------------------------------------------------------- main estimate

def check_main_estimate(fld, z_o, R: float, eps: float, params: Params, geometry: str = "intrinsic",
                        spec: QuadratureSpec = VERIFY_SPEC) -> Report:
    """Both sides of the higher-integrability estimate with C = 1.

    geometry "intrinsic": Q_R = B_R x (t_o - R^{(1+m)/m}, t_o + R^{(1+m)/m});
    geometry "standard": C_R = B_R x (t_o - R^2, t_o + R^2), with the R^{-2 eps}
    factor and the standard-cylinder form of the U quantity.
    A divergent lhs is returned as a report with status "divergent".
    """
    if not (0 < eps <= 1):
        raise DomainError("eps must lie in (0, 1]")
    m, r = params.m, params.r
    x_o, t_o = z_o
    if geometry == "intrinsic":
        q1, q2 = intrinsic(x_o, t_o, R, 1.0, m), intrinsic(x_o, t_o, 2 * R, 1.0, m)
        key = "main"
    elif geometry == "standard":
        q1, q2 = standard(x_o, t_o, R), standard(x_o, t_o, 2 * R)
        key = "main_standard"
    else:
        raise DomainError(f"unknown geometry {geometry!r}")
    pd = _params_dict(params, eps=eps, R=R, geometry=geometry, cylinder=q1.describe())
    try:
        lhs, e1 = _grad_mean(fld, q1, 2 + 2 * eps, spec)
    except DivergenceSignal as exc:
        rep = signal_report("main", _anchor(key), "divergent", str(exc), pd)
        rep.extra["side"] = "lhs"
        rep.extra["partial"] = float(np.max(np.abs(np.asarray(exc.partial)))) if exc.partial is not None else None
        return rep
    d = scaling_deficit(params)
    try:
        ur, e2 = _cyl_mean(field_integrand(fld, "|u|", r).fn, q2, fld.radial, _singular(fld), spec)
        f1, e3 = _forcing_term(fld, q2, params, spec)
        g, e4 = _grad_mean(fld, q2, 2.0, spec)
    except DivergenceSignal as exc:
        # u itself is not r-integrable on Q_2R: the estimate has no finite right-hand side
        rep = signal_report("main", _anchor(key), "divergent", str(exc), pd, lhs=lhs, rhs=math.inf)
        rep.extra["side"] = "rhs"
        return rep
    if geometry == "intrinsic":
        U = 1 + (float(ur) / R ** (r / m)) ** ((1 + m) / r) + f1
        rhs = U ** (eps * d) * g + f1 ** (1 + eps)
    else:
        U = 1 + float(ur) ** ((1 + m) / r) + R**2 * f1
        rhs = R ** (-2 * eps) * U ** (eps * d) * g + f1 ** (1 + eps)
    return Report("main", _anchor(key), lhs, rhs, None, pd, None, None, e1 + e2 + e3 + e4, "ok",
                  {"U": U, "gradient_term": g, "forcing_term": f1})
