"""Non-uniform systems of sub-intrinsic cylinders and the machinery built on them.

For a base point z_o and outer radius R the map rho -> theta_rho is built on
a radius grid: theta_tilde is the smallest theta >= lambda_o for which the
cylinder Q_rho^(theta) is sub-intrinsic, and theta_rho is the running
maximum of theta_tilde from R downwards. The module also provides the
Vitali-type covering by such cylinders, the stopping-time radius, and the
layer-cake identity used to pass from super-level sets to integrals.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field as dc_field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, NotApplicable, OverflowSignal, PreconditionUnmet
from .exponents import Params, lambda_r, q_exponent, theta_bound_exponent
from .geometry import (Cylinder, Integrand, QuadratureSpec, ball_volume, field_integrand,
                       integrate, intrinsic, masked_integral, mean)
from .report import Report, ratio_of

FAST_SPEC = QuadratureSpec(time_error=False, rtol=1e-9)
THETA_CEILING = 1e12


def _zo(z_o):
    x_o, t_o = z_o
    return tuple(float(v) for v in np.atleast_1d(x_o)), float(t_o)


# ---------------------------------------------------------------- theta tilde

def _ur_integrand(fld, params: Params) -> Integrand:
    return field_integrand(fld, "|u|", params.r)


def theta_gap_parts(fld, z_o, rho: float, theta: float, params: Params,
                    spec: QuadratureSpec = FAST_SPEC):
    """(lhs, rhs) of the defining inequality of theta_tilde.

    lhs = |Q_rho|^{-1} int_{Q_rho^(theta)} |u|^r / rho^{r/m}, with |Q_rho| the
    theta = 1 volume, and rhs = theta^{m lambda_r / (1+m)}.
    """
    x_o, t_o = _zo(z_o)
    m = params.m
    cyl = intrinsic(x_o, t_o, rho, theta, m)
    base_volume = ball_volume(len(x_o), rho) * 2.0 * rho ** ((1 + m) / m)
    val = float(integrate(_ur_integrand(fld, params), cyl, spec).value)
    lhs = val / base_volume / rho ** (params.r / m)
    rhs = theta ** (m * lambda_r(params) / (1 + m))
    return lhs, rhs


def theta_tilde(fld, z_o, rho: float, lambda_o: float, params: Params,
                spec: QuadratureSpec = FAST_SPEC, max_steps: int = 80) -> float:
    """Smallest theta >= lambda_o making Q_rho^(theta)(z_o) sub-intrinsic.

    The gap lhs - rhs is non-increasing in theta for m < 1, so the root is
    bracketed by doubling and then bisected in log(theta).
    """
    if lambda_r(params) <= 0:
        raise DomainError("theta_tilde needs lambda_r > 0")
    if params.m >= 1:
        raise DomainError("theta_tilde assumes m < 1 (monotone nesting)")

    def gap(th):
        lhs, rhs = theta_gap_parts(fld, z_o, rho, th, params, spec)
        return lhs - rhs

    if gap(lambda_o) <= 0:
        return float(lambda_o)
    lo, hi = float(lambda_o), 2.0 * float(lambda_o)
    while gap(hi) > 0:
        lo, hi = hi, 2.0 * hi
        if hi > THETA_CEILING:
            raise OverflowSignal(f"no bracket for theta below {THETA_CEILING:g} at rho = {rho:g}")
    llo, lhi = math.log(lo), math.log(hi)
    for _ in range(max_steps):
        mid = 0.5 * (llo + lhi)
        if mid <= llo or mid >= lhi:
            break
        if gap(math.exp(mid)) > 0:
            llo = mid
        else:
            lhi = mid
    return math.exp(lhi)


def theta_tilde_constant(c: float, rho: float, lambda_o: float, m: float) -> float:
    """Closed form of theta_tilde for the constant field |u| = c."""
    if c == 0:
        return float(lambda_o)
    return max(float(lambda_o), (c * rho ** (-1.0 / m)) ** ((1 + m) / (2 * m)))


# ---------------------------------------------------------------- systems

def radius_grid(R: float, rho_min: float, per_decade: int = 64) -> np.ndarray:
    if not (0 < rho_min < R):
        raise DomainError("need 0 < rho_min < R")
    n = max(2, int(math.ceil(per_decade * math.log10(R / rho_min))) + 1)
    return np.geomspace(rho_min, R, n)


@dataclass
class ThetaSystem:
    z_o: tuple
    R: float
    lambda_o: float
    params: Params
    rhos: np.ndarray
    theta_tilde: np.ndarray
    theta: np.ndarray
    field: object = dc_field(default=None, repr=False)
    spec: QuadratureSpec = FAST_SPEC
    verdicts: dict = dc_field(default_factory=dict)

    def index_of(self, rho: float) -> int:
        j = int(np.searchsorted(self.rhos, rho * (1 - 1e-12)))
        if j >= self.rhos.size or abs(self.rhos[j] - rho) > 1e-9 * rho:
            raise DomainError(f"rho = {rho} is not a grid radius")
        return j

    def theta_at(self, rho: float) -> float:
        """theta_rho between grid points by log-log interpolation (monotone, continuous)."""
        r = self.rhos
        if rho >= r[-1]:
            return float(self.theta[-1])
        if rho < r[0] * (1 - 1e-12):
            raise DomainError("rho below the grid")
        return float(np.exp(np.interp(math.log(rho), np.log(r), np.log(self.theta))))

    def rho_tilde(self, rho: float) -> float:
        return rho_tilde(self, rho)

    def cylinder(self, rho: float) -> Cylinder:
        x_o, t_o = self.z_o
        return intrinsic(x_o, t_o, rho, self.theta_at(rho), self.params.m)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rho", "theta_tilde", "theta", "rho_tilde"])
        for j, r in enumerate(self.rhos):
            w.writerow([repr(float(r)), repr(float(self.theta_tilde[j])),
                        repr(float(self.theta[j])), repr(float(rho_tilde(self, float(r))))])
        return buf.getvalue()


def build_theta_system(fld, z_o, R: float, lambda_o: float, params: Params,
                       grid: Optional[Sequence[float]] = None,
                       spec: QuadratureSpec = FAST_SPEC, validate: bool = True,
                       pool=None) -> ThetaSystem:
    """theta_tilde on the grid, then theta_rho = max over grid radii in [rho, R]."""
    rhos = np.asarray(grid if grid is not None else radius_grid(R, R / 10.0), dtype=float)
    if np.any(np.diff(rhos) <= 0) or abs(rhos[-1] - R) > 1e-12 * R:
        raise DomainError("grid must be increasing and end at R")
    z_o = _zo(z_o)
    job = lambda r: theta_tilde(fld, z_o, float(r), lambda_o, params, spec)
    tt = np.array(list(pool.map(job, rhos)) if pool is not None else [job(r) for r in rhos])
    theta = np.maximum.accumulate(tt[::-1])[::-1]
    system = ThetaSystem(z_o, float(R), float(lambda_o), params, rhos, tt, theta, fld, spec)
    if validate:
        system.verdicts = validate_system(system)
    return system


def validate_system(system: ThetaSystem, rel: float = 1e-6, pairs: bool = True) -> dict:
    """Check the structural properties of a built system on its grid."""
    p = system.params
    E = theta_bound_exponent(p)
    th, tt, r = system.theta, system.theta_tilde, system.rhos
    out = {}
    out["theta_ge_lambda_o"] = bool(np.all(th >= system.lambda_o * (1 - 1e-15)))
    out["monotone"] = bool(np.all(np.diff(th) <= 0))
    # theta_rho <= (s/rho)^E theta_s for grid pairs rho <= s
    lhs = th[:, None]
    rhs = (r[None, :] / r[:, None]) ** E * th[None, :]
    mask = r[None, :] >= r[:, None]
    out["bound_theta"] = bool(np.all((lhs <= rhs * (1 + rel)) | ~mask))
    out["bound_theta_R"] = bool(tt[-1] <= 4.0**E * system.lambda_o * (1 + rel))
    out["bound_theta_2"] = bool(np.all(th <= (4 * system.R / r) ** E * system.lambda_o * (1 + rel)))
    if pairs and system.field is not None:
        worst = 0.0
        m = p.m
        x_o, t_o = system.z_o
        g = _ur_integrand(system.field, p)
        for i, rho in enumerate(r):
            for s in r[i:]:
                cyl = intrinsic(x_o, t_o, float(s), float(th[i]), m)
                val = float(mean(g, cyl, system.spec).value) / s ** (p.r / m)
                bound = th[i] ** (2 * p.r * m / (1 + m))
                worst = max(worst, val / bound)
        out["sub_intrinsic"] = bool(worst <= 1 + rel)
        out["sub_intrinsic_worst_ratio"] = worst
    return out


def rho_tilde(system: ThetaSystem, rho: float) -> float:
    """R when theta_rho = lambda_o, else the smallest grid s >= rho with theta_s = theta_tilde_s."""
    j = system.index_of(rho) if rho < system.R else system.rhos.size - 1
    if system.theta[j] == system.lambda_o:
        return system.R
    for k in range(j, system.rhos.size):
        if system.theta[k] == system.theta_tilde[k]:
            return float(system.rhos[k])
    return system.R


# ---------------------------------------------------------------- covering

def c_hat_exponent(params: Params) -> float:
    lam = lambda_r(params)
    if lam <= 0:
        raise DomainError("c_hat needs lambda_r > 0")
    m = params.m
    return (1 - m) / lam * (params.N + 1 + (params.r + 1) / m)


def c_hat(params: Params) -> float:
    """Enlargement factor max(20, 4 (4 * 52^e + 1)), e = ((1-m)/lambda_r)(N+1+(r+1)/m)."""
    e = c_hat_exponent(params)
    return max(20.0, 4.0 * (4.0 * 52.0**e + 1.0))


def c_hat_impractical(params: Params, limit: float = 1e4) -> bool:
    return c_hat(params) > limit


@dataclass(frozen=True)
class Candidate:
    """The cylinder Q_{4 r}^(theta)(z) of a covering family (radius parameter r)."""

    x: tuple
    t: float
    r: float
    theta: float

    def cylinder(self, m: float, factor: float = 4.0) -> Cylinder:
        return intrinsic(self.x, self.t, factor * self.r, self.theta, m)


@dataclass
class CoverFamily:
    candidates: list
    c_hat: float
    R: float
    m: float
    selected: list = dc_field(default_factory=list)
    classes: list = dc_field(default_factory=list)
    witnesses: list = dc_field(default_factory=list)
    disjoint: bool = False
    contained: bool = False

    def to_json(self) -> str:
        d = {
            "c_hat": self.c_hat, "R": self.R, "m": self.m,
            "candidates": [{"x": list(c.x), "t": c.t, "r": c.r, "theta": c.theta,
                            "class": j} for c, j in zip(self.candidates, self.classes)],
            "selected": self.selected,
            "witnesses": self.witnesses,
            "disjoint": self.disjoint,
            "contained": self.contained,
        }
        return json.dumps(d, sort_keys=True, indent=2)


def radius_class(r: float, R: float, chat: float) -> int:
    """j with R/(2^j chat) < r <= R/(2^{j-1} chat)."""
    j = int(math.floor(math.log2(R / (chat * r)))) + 1
    # guard the floor against rounding at class boundaries
    while R / (2**j * chat) >= r:
        j += 1
    while j > 1 and R / (2 ** (j - 1) * chat) < r:
        j -= 1
    return j


def vitali_cover(candidates: Sequence[Candidate], params: Params, R: float,
                 chat: Optional[float] = None) -> CoverFamily:
    """Greedy disjoint selection by dyadic radius classes, then brute-force verification."""
    chat = c_hat(params) if chat is None else float(chat)
    m = params.m
    cands = list(candidates)
    for c in cands:
        if not (0 < c.r < R / chat):
            raise PreconditionUnmet(f"candidate radius {c.r} violates r < R/c_hat = {R / chat}")
    classes = [radius_class(c.r, R, chat) for c in cands]
    cyl = [c.cylinder(m) for c in cands]
    order = sorted(range(len(cands)), key=lambda i: (classes[i], -cyl[i].radius, i))
    selected = []
    for i in order:
        if all(not cyl[i].intersects(cyl[j]) for j in selected):
            selected.append(i)
    fam = CoverFamily(cands, chat, R, m, sorted(selected), classes)
    fam.disjoint = all(not cyl[a].intersects(cyl[b])
                       for ia, a in enumerate(fam.selected) for b in fam.selected[ia + 1:])
    big = {j: cands[j].cylinder(m, factor=chat) for j in fam.selected}
    witnesses = []
    for i in range(len(cands)):
        w = next((j for j in fam.selected if big[j].contains_cylinder(cyl[i])), None)
        witnesses.append(w)
    fam.witnesses = witnesses
    fam.contained = all(w is not None for w in witnesses)
    return fam


# ---------------------------------------------------------------- stopping time

def lambda_o_of(fld, Q4R: Cylinder, params: Params, spec: QuadratureSpec = FAST_SPEC,
                parts: bool = False):
    """1 + [ (mean |u|^r/(4R)^{r/m})^{(1+m)/r} + mean |Du^m|^2 + (mean |F|^{2p})^{1/p} ]^{r/(m lambda_r)}.

    Q4R is the cylinder whose rho is 4R.
    """
    m, r = params.m, params.r
    lam = lambda_r(params)
    if lam <= 0:
        raise DomainError("lambda_o needs lambda_r > 0")
    a = float(mean(field_integrand(fld, "|u|", r), Q4R, spec).value) / Q4R.rho ** (r / m)
    b = float(mean(field_integrand(fld, "|Du|", 2.0), Q4R, spec).value)
    c = 0.0
    if fld.has_forcing():
        c = float(mean(field_integrand(fld, "|F|", 2.0 * params.p), Q4R, spec).value) ** (1 / params.p)
    bracket = a ** ((1 + m) / r) + b + c
    val = 1.0 + bracket ** (r / (m * lam))
    if parts:
        return val, {"u_term": a ** ((1 + m) / r), "grad_term": b, "forcing_term": c}
    return val


def level_floor_base(R1: float, R2: float, R: float, params: Params,
                     chat: Optional[float] = None) -> float:
    """B = (4 c_hat R / (R2 - R1))^{r (N+2)(1+m) / (2 m^2 lambda_r)}."""
    if not R2 > R1:
        raise DomainError("need R2 > R1")
    chat = c_hat(params) if chat is None else chat
    m, r, N = params.m, params.r, params.N
    return (4 * chat * R / (R2 - R1)) ** (r * (N + 2) * (1 + m) / (2 * m * m * lambda_r(params)))


def level_floor(R1: float, R2: float, R: float, params: Params, lambda_o: float = 1.0,
                chat: Optional[float] = None) -> float:
    """Smallest admissible level B lambda_o."""
    return level_floor_base(R1, R2, R, params, chat) * lambda_o


def stopping_function(fld, z_o, rho: float, system: ThetaSystem, params: Params,
                      spec: QuadratureSpec = FAST_SPEC) -> float:
    """mean_{Q_rho^(theta_rho)} |Du^m|^2 + (mean |F|^{2p})^{1/p}."""
    x_o, t_o = _zo(z_o)
    cyl = intrinsic(x_o, t_o, rho, system.theta_at(rho), params.m)
    val = float(mean(field_integrand(fld, "|Du|", 2.0), cyl, spec).value)
    if fld.has_forcing():
        val += float(mean(field_integrand(fld, "|F|", 2.0 * params.p), cyl, spec).value) ** (1 / params.p)
    return val


@dataclass
class StoppingResult:
    radius: float
    level: float
    value: float
    checked_above: list
    strictly_below_above: bool


def stopping_radius(fld, z_o, lam: float, system: ThetaSystem, params: Params,
                    rho_max: float, floor: Optional[float] = None, n_scan: int = 256,
                    spec: QuadratureSpec = FAST_SPEC) -> StoppingResult:
    """Maximal rho < rho_max with stopping_function(rho) = lam^{2m}.

    rho_max plays the role of (R2 - R1)/c_hat. The scan runs over log-spaced
    radii down to the smallest grid radius of the system; the last sign
    change is refined by bisection.
    """
    m = params.m
    target = lam ** (2 * m)
    if floor is not None and not lam > floor:
        raise PreconditionUnmet(f"level {lam:g} does not exceed the floor {floor:g}")
    x_o, t_o = _zo(z_o)
    g0 = float(fld.grad_norm(np.array(np.linalg.norm(x_o)), np.array(t_o))) if fld.radial else \
        float(fld.grad_norm(np.asarray(x_o), np.array(t_o)))
    if not g0 > lam**m:
        raise PreconditionUnmet("the base point is not in the super-level set |Du^m| > lam^m")
    lo = float(system.rhos[0])
    hi = min(float(rho_max), system.R)
    radii = np.geomspace(lo, hi, n_scan + 1)[:-1]
    F = lambda s: stopping_function(fld, z_o, float(s), system, params, spec) - target
    vals = np.array([F(s) for s in radii])
    above = np.nonzero(vals >= 0)[0]
    if above.size == 0:
        raise NotApplicable("the averaged gradient never reaches lam^{2m} on the scanned radii")
    k = int(above[-1])
    if k == radii.size - 1:
        # crossing lies between the last scanned radius and rho_max
        a, b = radii[k], hi * (1 - 1e-12)
        if F(b) >= 0:
            raise NotApplicable("the level is reached at rho_max itself; no maximal radius below it")
    else:
        a, b = radii[k], radii[k + 1]
    for _ in range(100):
        mid = math.sqrt(a * b)
        if F(mid) >= 0:
            a = mid
        else:
            b = mid
        if b / a - 1 < 1e-13:
            break
    rho = a
    probes = list(np.geomspace(rho, hi, 10)[1:-1])
    below = [float(F(s) + target) for s in probes]
    ok = all(v < target for v in below)
    return StoppingResult(rho, target, float(F(rho) + target), list(zip(probes, below)), ok)


# ---------------------------------------------------------------- layer-cake identity

def fubini_identity_check(g: Integrand, k: float, lam1: float, eps: float, cyl: Cylinder,
                          m: float, q: float, n_lambda: int = 512, lam_breaks=(),
                          spec: QuadratureSpec = QuadratureSpec(time_error=False, rtol=1e-10)) -> Report:
    """Both sides of the layer-cake identity for the truncation g_k = min(g, k^m).

    lhs = int_{lam1}^{inf} lam^{2 m eps - 1} [ int_{E_k(lam)} g_k^{2-2q} g^{2q} ] dlam
    rhs = (2 m eps)^{-1} int_{E_k(lam1)} [ g_k^{2-2q+2eps} g^{2q} - lam1^{2 m eps} g_k^{2-2q} g^{2q} ]
    with E_k(lam) = {g_k > lam^m}. The outer integral is a Gauss-Legendre rule
    on [lam1, k] (the level sets are empty above k); each inner integral is
    an exact-breakpoint level-set quadrature. lam_breaks lists levels where
    the distribution of g jumps (atoms of g_k^{1/m}); the outer rule is split there.
    """
    if not (0 < eps <= 1):
        raise DomainError("eps must lie in (0, 1]")
    if not k > lam1:
        raise DomainError("need k > lam1")
    cap = k**m
    gk = Integrand(lambda r, t: np.minimum(np.asarray(g(r, t), float), cap), True, g.singular_at_origin)

    def base(r, t):
        gv = np.asarray(g(r, t), float)
        gkv = np.minimum(gv, cap)
        return gkv ** (2 - 2 * q) * gv ** (2 * q)

    h = Integrand(base, True, g.singular_at_origin)
    # known jumps of the distribution function split the outer rule into panels
    edges = [lam1] + sorted(b for b in lam_breaks if lam1 < b < k) + [k]
    n_pan = max(n_lambda // (len(edges) - 1), 8)
    x, w = np.polynomial.legendre.leggauss(n_pan)
    lams = np.concatenate([0.5 * (b - a) * x + 0.5 * (b + a) for a, b in zip(edges, edges[1:])])
    wl = np.concatenate([0.5 * (b - a) * w for a, b in zip(edges, edges[1:])])
    lhs = 0.0
    err = 0.0
    for lv, wv in zip(lams, wl):
        res = masked_integral(h, gk, lv**m, cyl, spec)
        lhs += wv * lv ** (2 * m * eps - 1) * float(res.value)
        err += abs(wv * lv ** (2 * m * eps - 1)) * res.error

    def rhs_integrand(r, t):
        gv = np.asarray(g(r, t), float)
        gkv = np.minimum(gv, cap)
        return (gkv ** (2 - 2 * q + 2 * eps) * gv ** (2 * q)
                - lam1 ** (2 * m * eps) * gkv ** (2 - 2 * q) * gv ** (2 * q))

    res = masked_integral(Integrand(rhs_integrand, True, g.singular_at_origin), gk, lam1**m, cyl, spec)
    rhs = float(res.value) / (2 * m * eps)
    gap = float(abs(lhs - rhs) / max(abs(lhs), abs(rhs))) if (lhs or rhs) else 0.0
    return Report("fubini", "layer-cake exchange for the truncated gradient", lhs, rhs,
                  ratio_of(lhs, rhs),
                  {"k": k, "lam1": lam1, "eps": eps, "m": m, "q": q, "n_lambda": n_lambda,
                   "cylinder": cyl.describe()},
                  None, None, err + res.error, "ok", {"relative_gap": gap})
