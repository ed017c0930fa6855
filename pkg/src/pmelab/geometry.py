"""Space-time cylinders and quadrature over them.

Radial integrands over off-centre balls are reduced exactly to one radial
integral: the sphere of radius rho about the origin meets B(x_o, s) in a
spherical cap whose surface fraction is a regularised incomplete beta
function. The radial integral is done with adaptive Gauss-Legendre panels,
square-root substitutions at the cap end points, and dyadic panels towards
the origin where the exact solutions are singular.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize, special

from .errors import DivergenceSignal, DomainError, UnboundedSignal

INTRINSIC = "intrinsic"
ONE_SIDED = "one_sided"
STANDARD = "standard"


# ---------------------------------------------------------------- cylinders

def ball_volume(N: int, s: float = 1.0) -> float:
    return math.pi ** (N / 2) / math.gamma(N / 2 + 1) * s**N


def sphere_area(N: int) -> float:
    """Surface measure of the unit sphere in R^N, N pi^{N/2} / Gamma(N/2 + 1)."""
    return N * math.pi ** (N / 2) / math.gamma(N / 2 + 1)


@dataclass(frozen=True)
class Cylinder:
    """Ball B(x_o, radius) times the time interval (t_lo, t_hi).

    Build instances with `intrinsic`, `one_sided` or `standard`; `rho`,
    `theta` and `kind` are kept as metadata.
    """

    x_o: tuple
    t_o: float
    radius: float
    t_lo: float
    t_hi: float
    rho: float
    theta: float = 1.0
    kind: str = INTRINSIC
    m: Optional[float] = None

    @property
    def N(self) -> int:
        return len(self.x_o)

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.x_o, dtype=float)

    @property
    def duration(self) -> float:
        return self.t_hi - self.t_lo

    def volume(self) -> float:
        return ball_volume(self.N, self.radius) * self.duration

    def dist_to_origin(self) -> float:
        return float(np.linalg.norm(self.center))

    def contains(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        inside = np.linalg.norm(x - self.center, axis=-1) < self.radius
        return inside & (t > self.t_lo) & (t <= self.t_hi if self.kind == ONE_SIDED else t < self.t_hi)

    def contains_cylinder(self, other: "Cylinder", slack: float = 1e-12) -> bool:
        d = float(np.linalg.norm(self.center - other.center))
        tol = slack * max(1.0, self.radius)
        return (d + other.radius <= self.radius + tol
                and other.t_lo >= self.t_lo - slack * max(1.0, abs(self.t_lo))
                and other.t_hi <= self.t_hi + slack * max(1.0, abs(self.t_hi)))

    def intersects(self, other: "Cylinder") -> bool:
        d = float(np.linalg.norm(self.center - other.center))
        if d >= self.radius + other.radius:
            return False
        return self.t_lo < other.t_hi and other.t_lo < self.t_hi

    def translated(self, dx, dt: float = 0.0) -> "Cylinder":
        return replace(self, x_o=tuple(np.asarray(self.x_o, float) + np.asarray(dx, float)),
                       t_o=self.t_o + dt, t_lo=self.t_lo + dt, t_hi=self.t_hi + dt)

    def with_radius_factor(self, factor: float) -> "Cylinder":
        """Same kind and centre with rho multiplied by factor."""
        if self.kind == INTRINSIC:
            return intrinsic(self.x_o, self.t_o, self.rho * factor, self.theta, self.m)
        if self.kind == STANDARD:
            return standard(self.x_o, self.t_o, self.rho * factor)
        raise DomainError("one-sided cylinders have independent scales; rebuild explicitly")

    def describe(self) -> dict:
        return {"kind": self.kind, "x_o": [float(v) for v in self.x_o], "t_o": self.t_o,
                "rho": self.rho, "theta": self.theta, "radius": self.radius,
                "t_lo": self.t_lo, "t_hi": self.t_hi}


def intrinsic(x_o, t_o: float, rho: float, theta: float = 1.0, m: float = 1.0) -> Cylinder:
    """Q_rho^(theta)(z_o): radius theta^{m(m-1)/(1+m)} rho, half-length rho^{(1+m)/m}."""
    if not (rho > 0 and theta > 0 and m > 0):
        raise DomainError("rho, theta and m must be positive")
    radius = theta ** (m * (m - 1) / (1 + m)) * rho
    half = rho ** ((1 + m) / m)
    return Cylinder(tuple(float(v) for v in np.atleast_1d(x_o)), float(t_o), radius,
                    t_o - half, t_o + half, rho, theta, INTRINSIC, m)


def one_sided(x_o, t_o: float, R: float, S: float) -> Cylinder:
    """B_R(x_o) x (t_o - S, t_o]."""
    if not (R > 0 and S > 0):
        raise DomainError("R and S must be positive")
    return Cylinder(tuple(float(v) for v in np.atleast_1d(x_o)), float(t_o), R,
                    t_o - S, t_o, R, 1.0, ONE_SIDED)


def standard(x_o, t_o: float, R: float) -> Cylinder:
    """Parabolic cylinder B_R(x_o) x (t_o - R^2, t_o + R^2)."""
    if not R > 0:
        raise DomainError("R must be positive")
    return Cylinder(tuple(float(v) for v in np.atleast_1d(x_o)), float(t_o), R,
                    t_o - R * R, t_o + R * R, R, 1.0, STANDARD)


# ---------------------------------------------------------------- quadrature spec

@dataclass(frozen=True)
class QuadratureSpec:
    radial_points: int = 32
    time_order: int = 16
    time_panels: int = 1
    rtol: float = 1e-6
    atol: float = 0.0
    max_depth: int = 40
    max_panels: int = 4000
    r_min: float = 1e-12
    grading_ratio: float = 2.0
    time_error: bool = True
    mc_samples: int = 200_000
    seed: Optional[int] = None
    method: str = "auto"  # auto | radial | product | monte_carlo

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


DEFAULT_SPEC = QuadratureSpec()


@dataclass
class Integral:
    value: object
    error: float
    evaluations: int = 0
    method: str = "radial"
    details: dict = field(default_factory=dict)


@lru_cache(maxsize=64)
def _gl(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _gl_on(a: float, b: float, n: int):
    x, w = _gl(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


# ---------------------------------------------------------------- integrands

@dataclass
class Integrand:
    """A scalar or vector valued function over space-time.

    Radial integrands take (r, t); others take (x, t) with x of shape (..., N).
    """

    fn: Callable
    radial: bool = True
    singular_at_origin: bool = False
    name: str = ""
    vector: bool = False

    def norm(self) -> "Integrand":
        """Scalar integrand |f| (Euclidean norm over components when vector valued)."""
        if not self.vector:
            base = self.fn
            return Integrand(lambda a, t: np.abs(np.asarray(base(a, t), dtype=float)),
                             self.radial, self.singular_at_origin, f"|{self.name}|")
        base = self.fn
        return Integrand(lambda a, t: np.sqrt(np.sum(np.asarray(base(a, t), dtype=float) ** 2, axis=-1)),
                         self.radial, self.singular_at_origin, f"|{self.name}|")

    def __call__(self, a, t):
        return self.fn(a, t)


def as_integrand(f, radial=None, singular=None) -> Integrand:
    if isinstance(f, Integrand):
        return f
    if hasattr(f, "radial") and hasattr(f, "u"):
        fld = f
        return Integrand(fld.u, fld.radial, getattr(fld, "singular_at_origin", False), "u", True)
    return Integrand(f, True if radial is None else radial, bool(singular))


def field_integrand(fld, what: str, power: float = 1.0, scale: float = 1.0) -> Integrand:
    """Integrand scale * g^power with g one of u, |u|, |Du^m|, |F|, um."""
    vector = what in ("u", "um")
    if what == "u":
        fn = fld.u
    elif what == "um":
        fn = fld.um
    elif what == "|u|":
        fn = fld.u_norm
    elif what == "|Du|":
        fn = fld.grad_norm
    elif what == "|F|":
        fn = fld.F_norm
    else:
        raise DomainError(f"unknown field expression {what!r}")
    if power != 1.0 or scale != 1.0:
        base = fn
        fn = lambda a, t: scale * np.asarray(base(a, t)) ** power
    return Integrand(fn, fld.radial, getattr(fld, "singular_at_origin", False), what, vector)


# ---------------------------------------------------------------- radial engine

def cap_fraction(rho, d: float, s: float, N: int) -> np.ndarray:
    """Fraction of the sphere |y| = rho lying inside the ball B(x_o, s), |x_o| = d."""
    rho = np.asarray(rho, dtype=float)
    if d == 0.0:
        return (rho < s).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = (rho * rho + d * d - s * s) / (2.0 * rho * d)
    c = np.where(rho > 0, c, -np.inf if s > d else np.inf)
    out = np.empty_like(rho)
    full = c <= -1.0
    empty = c >= 1.0
    mid = ~(full | empty)
    out[full] = 1.0
    out[empty] = 0.0
    if np.any(mid):
        cm = c[mid]
        if N == 1:
            out[mid] = 0.5
        else:
            # 1 - c and 1 + c from differences, so tiny balls far from the origin keep their digits
            rm = rho[mid]
            one_minus = (s - (rm - d)) * (s + (rm - d)) / (2.0 * rm * d)
            one_plus = ((rm + d) - s) * ((rm + d) + s) / (2.0 * rm * d)
            sin2 = np.clip(one_minus * one_plus, 0.0, 1.0)
            # near the equator sin^2 ~ 1 carries no digits of cos^2; use c^2 there
            small = np.abs(cm) <= 0.5
            half = np.where(small,
                            0.5 - 0.5 * special.betainc(0.5, (N - 1) / 2.0, np.where(small, cm * cm, 0.0)),
                            0.5 * special.betainc((N - 1) / 2.0, 0.5, sin2))
            out[mid] = np.where(cm >= 0, half, 1.0 - half)
    return out


def _subst_nodes(a: float, b: float, n: int, mode: str):
    """GL nodes on [a, b] after a square-root clustering at the chosen ends."""
    x, w = _gl(n)
    v = 0.5 * (x + 1.0)
    wv = 0.5 * w
    L = b - a
    if mode == "plain":
        return a + L * v, L * wv
    if mode == "left":
        return a + L * v * v, 2.0 * L * v * wv
    if mode == "right":
        return b - L * v * v, 2.0 * L * v * wv
    raise ValueError(mode)


class _Radial:
    """Adaptive radial integrator for one ball and one radial value function."""

    def __init__(self, values: Callable, weight: Callable, spec: QuadratureSpec):
        self.values = values  # rho (1-D) -> array (n_rho, ...)
        self.weight = weight  # rho (1-D) -> array (n_rho,)
        self.spec = spec
        self.evals = 0

    def panel(self, a, b, mode):
        n = self.spec.radial_points
        xs, ws = _subst_nodes(a, b, n, mode)
        xl, wl = _subst_nodes(a, b, max(n // 2, 2), mode)
        pts = np.concatenate([xs, xl])
        vals = np.asarray(self.values(pts), dtype=float)
        self.evals += pts.size
        wts = self.weight(pts)
        vals = np.moveaxis(vals, 0, -1) * wts
        hi = vals[..., :n] @ ws
        lo = vals[..., n:] @ wl
        if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
            raise DivergenceSignal("non-finite integrand values on a radial panel")
        return hi, float(np.max(np.abs(np.asarray(hi - lo))))

    def adaptive(self, pieces):
        """pieces: list of (a, b, mode). Refines the worst panel until tolerance holds."""
        spec = self.spec
        heap = []
        total = None
        counter = 0
        for a, b, mode in pieces:
            if b <= a:
                continue
            val, err = self.panel(a, b, mode)
            heapq.heappush(heap, (-err, counter, a, b, mode, 0, val))
            counter += 1
        if not heap:
            return 0.0, 0.0
        n_split = 0
        while True:
            total = sum(item[6] for item in heap)
            err = sum(-item[0] for item in heap)
            scale = float(np.max(np.abs(np.asarray(total))))
            if err <= max(spec.rtol * scale, spec.atol) or err == 0.0:
                return total, err
            worst = heapq.heappop(heap)
            e, _, a, b, mode, depth, val = worst
            if depth >= spec.max_depth or n_split >= spec.max_panels:
                heapq.heappush(heap, worst)
                raise DivergenceSignal(
                    f"radial refinement did not converge (error {err:.3g} vs scale {scale:.3g})",
                    partial=total)
            mid = 0.5 * (a + b)
            modes = {"plain": ("plain", "plain"), "left": ("left", "plain"),
                     "right": ("plain", "right")}[mode]
            for (aa, bb), md in zip(((a, mid), (mid, b)), modes):
                v, er = self.panel(aa, bb, md)
                heapq.heappush(heap, (-er, counter, aa, bb, md, depth + 1, v))
                counter += 1
            n_split += 1

    def graded(self, c: float):
        """Integral over (0, c] through dyadic panels; detects divergent series."""
        spec = self.spec
        q = 1.0 / spec.grading_ratio
        terms = []
        errs = []
        hi = c
        growth_run = 0
        partial = None
        while hi > spec.r_min:
            lo = hi * q
            val, err = self.adaptive([(lo, hi, "plain")])
            terms.append(val)
            errs.append(err)
            prev = partial
            partial = val if partial is None else partial + val
            if prev is not None:
                pn = float(np.max(np.abs(np.asarray(prev))))
                cn = float(np.max(np.abs(np.asarray(partial))))
                growth_run = growth_run + 1 if (pn > 0 and cn > 1.01 * pn) else 0
            # growth of the partial sums alone also happens for slowly
            # convergent geometric series, so the terms must also stop decaying
            if growth_run >= 8 and _terms_stalled(terms[-9:]):
                raise DivergenceSignal("dyadic annulus series keeps growing near the origin",
                                       partial=partial)
            hi = lo
        tail, tail_err = _tail_estimate(terms)
        if tail is None:
            raise DivergenceSignal("dyadic annulus series fails to decay", partial=partial)
        return partial + tail, float(sum(errs)) + tail_err


def _terms_stalled(terms, floor: float = 0.99) -> bool:
    mags = np.array([float(np.max(np.abs(np.asarray(t)))) for t in terms])
    if mags.size < 2 or np.any(mags[:-1] == 0):
        return False
    return bool(np.all(mags[1:] / mags[:-1] >= floor))


def _tail_estimate(terms):
    """Extrapolate the remainder of a dyadic series from its last terms.

    Two decay models are fitted to the last eight magnitudes, geometric
    (log a_j linear in j) and algebraic (log a_j linear in log j, which is
    what logarithmic corrections produce); the better fit supplies the tail.
    Returns (None, inf) when the fitted series does not converge.
    """
    mags = np.array([float(np.max(np.abs(np.asarray(t)))) for t in terms])
    last = terms[-1]
    if mags.size < 4 or mags[-1] == 0.0:
        return 0.0 * last, 0.0
    k = min(8, mags.size)
    a = mags[-k:]
    if np.any(a <= 0):
        return 0.0 * last, float(np.max(a))
    j = np.arange(mags.size - k + 1, mags.size + 1, dtype=float)
    la = np.log(a)
    cg, rg, *_ = np.polyfit(j, la, 1, full=True)
    cp, rp, *_ = np.polyfit(np.log(j), la, 1, full=True)
    res_g = float(rg[0]) if len(rg) else 0.0
    res_p = float(rp[0]) if len(rp) else 0.0
    if res_g <= res_p:
        q = math.exp(cg[0])
        if q >= 1.0:
            return None, math.inf
        tail_mag = mags[-1] * q / (1.0 - q)
    else:
        p = -cp[0]
        if p <= 1.0:
            return None, math.inf
        J = j[-1]
        tail_mag = mags[-1] * J / (p - 1.0)
    tail = last * (tail_mag / mags[-1])
    # the two models bracket the truth poorly when the decay is slow
    return tail, float(0.1 * tail_mag)


def _time_nodes(t_lo: float, t_hi: float, order: int, panels: int, splits=()):
    cuts = [t_lo] + sorted(s for s in splits if t_lo < s < t_hi) + [t_hi]
    ts, ws = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        edges = np.linspace(a, b, panels + 1)
        for aa, bb in zip(edges[:-1], edges[1:]):
            x, w = _gl_on(aa, bb, order)
            ts.append(x)
            ws.append(w)
    return np.concatenate(ts), np.concatenate(ws)


def _ball_pieces(d: float, s: float):
    """Radial pieces for the cap weight: (full_region_end, [(a, b, mode)])."""
    if d == 0.0:
        return s, []
    if d < s:
        lo, hi = s - d, s + d
        mid = 0.5 * (lo + hi)
        return lo, [(lo, mid, "left"), (mid, hi, "right")]
    lo, hi = d - s, d + s
    mid = 0.5 * (lo + hi)
    return 0.0, [(lo, mid, "left"), (mid, hi, "right")]


def _radial_ball_integral(values, d, s, N, spec, singular, breaks=()):
    """int_{B(x_o, s)} values(|x|) dx for |x_o| = d; values returns (n_rho, ...)."""
    area = sphere_area(N)

    def weight(rho):
        return area * rho ** (N - 1) * cap_fraction(rho, d, s, N)

    eng = _Radial(values, weight, spec)
    full_end, pieces = _ball_pieces(d, s)
    total = 0.0
    err = 0.0
    # extra breakpoints (level-set radii) split the pieces
    if breaks:
        pieces = _split_pieces(pieces, breaks)
    touches_origin = (full_end > 0.0) or (d == s)
    if full_end > 0.0:
        full_pieces = _split_pieces([(0.0, full_end, "plain")], breaks) if breaks else [(0.0, full_end, "plain")]
        first = full_pieces[0]
        rest = full_pieces[1:]
        c = first[1]
        if singular:
            gcut = min(c, 0.5 * (s - d) if d < s else c)
            v, e = eng.graded(gcut)
            total = total + v
            err += e
            if gcut < c:
                v, e = eng.adaptive([(gcut, c, "plain")])
                total = total + v
                err += e
        else:
            v, e = eng.adaptive([first])
            total = total + v
            err += e
        if rest:
            v, e = eng.adaptive(rest)
            total = total + v
            err += e
    if pieces:
        if d == s and singular:
            # the ball touches the pole: grade towards the origin first
            a0, b0, _ = pieces[0]
            cut = min(b0, 0.25 * s)
            v, e = eng.graded(cut)
            total = total + v
            err += e
            pieces = [(max(a, cut), b, md) for a, b, md in pieces if b > cut]
        v, e = eng.adaptive(pieces)
        total = total + v
        err += e
    return total, err, eng.evals, touches_origin


def _split_pieces(pieces, breaks):
    out = []
    for a, b, mode in pieces:
        cuts = [a] + sorted(x for x in breaks if a < x < b) + [b]
        for i, (aa, bb) in enumerate(zip(cuts[:-1], cuts[1:])):
            if mode == "left":
                md = "left" if i == 0 else "plain"
            elif mode == "right":
                md = "right" if i == len(cuts) - 2 else "plain"
            else:
                md = "plain"
            out.append((aa, bb, md))
    return out


def _time_splits(fld_or_int):
    T = getattr(fld_or_int, "extinction_time", None)
    return (T,) if T is not None else ()


def integrate(f, cyl: Cylinder, spec: QuadratureSpec = DEFAULT_SPEC,
              time_splits: Sequence[float] = ()) -> Integral:
    """Space-time integral of f over the cylinder."""
    f = as_integrand(f)
    method = spec.method
    if method == "monte_carlo":
        return monte_carlo(f, cyl, spec)
    if f.radial and method in ("auto", "radial"):
        return _integrate_radial(f, cyl, spec, time_splits)
    if not f.radial and method in ("auto", "product") and cyl.N <= 3:
        return _integrate_product(f, cyl, spec, time_splits)
    return monte_carlo(f, cyl, spec)


def _integrate_radial(f: Integrand, cyl: Cylinder, spec: QuadratureSpec, time_splits=()):
    d = cyl.dist_to_origin()
    s = cyl.radius
    ts, wt = _time_nodes(cyl.t_lo, cyl.t_hi, spec.time_order, spec.time_panels, time_splits)

    def values(rho):
        v = np.asarray(f(rho[None, :], ts[:, None]), dtype=float)
        return np.tensordot(wt, v, axes=(0, 0))

    total, err, ev, touches = _radial_ball_integral(values, d, s, cyl.N, spec, f.singular_at_origin)
    details = {"touches_origin": touches}
    if spec.time_error:
        ts2, wt2 = _time_nodes(cyl.t_lo, cyl.t_hi, max(spec.time_order // 2, 2),
                               spec.time_panels, time_splits)

        def values2(rho):
            v = np.asarray(f(rho[None, :], ts2[:, None]), dtype=float)
            return np.tensordot(wt2, v, axes=(0, 0))

        spec2 = replace(spec, rtol=max(spec.rtol, 1e-8))
        try:
            total2, _, ev2, _ = _radial_ball_integral(values2, d, s, cyl.N, spec2, f.singular_at_origin)
            terr = float(np.max(np.abs(np.asarray(total - total2))))
            ev += ev2
        except DivergenceSignal:
            terr = math.inf
        details["time_error"] = terr
        err = err + terr
    return Integral(total, float(err), ev, "radial", details)


def _sphere_rule(N: int, n: int):
    """Directions and weights (summing to the sphere area) for N = 1, 2, 3."""
    if N == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if N == 2:
        phi = 2 * math.pi * (np.arange(2 * n) + 0.5) / (2 * n)
        return np.stack([np.cos(phi), np.sin(phi)], -1), np.full(2 * n, 2 * math.pi / (2 * n))
    ct, wc = _gl(n)
    phi = 2 * math.pi * (np.arange(2 * n) + 0.5) / (2 * n)
    st = np.sqrt(1 - ct**2)
    dirs = np.stack([np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)),
                     np.outer(ct, np.ones_like(phi))], -1).reshape(-1, 3)
    w = np.outer(wc, np.full(2 * n, 2 * math.pi / (2 * n))).ravel()
    return dirs, w


def _integrate_product(f: Integrand, cyl: Cylinder, spec: QuadratureSpec, time_splits=()):
    """Tensor Gauss rule in polar coordinates about the ball centre (N <= 3)."""

    def run(nr, nt):
        N = cyl.N
        dirs, wd = _sphere_rule(N, nr)
        rr, wr = _gl_on(0.0, cyl.radius, nr)
        wr = wr * rr ** (N - 1)
        ts, wt = _time_nodes(cyl.t_lo, cyl.t_hi, nt, spec.time_panels, time_splits)
        x = cyl.center + rr[:, None, None] * dirs[None, :, :]
        acc = 0.0
        for tj, wj in zip(ts, wt):
            v = np.asarray(f(x, tj), dtype=float)
            acc = acc + wj * np.tensordot(np.outer(wr, wd), v, axes=((0, 1), (0, 1)))
        return acc, ts.size * x.shape[0] * x.shape[1]

    hi, n1 = run(spec.radial_points, spec.time_order)
    lo, n2 = run(max(spec.radial_points // 2, 2), max(spec.time_order // 2, 2))
    err = float(np.max(np.abs(np.asarray(hi - lo))))
    return Integral(hi, err, n1 + n2, "product")


def uniform_ball_samples(N: int, n: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((n, N))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    rad = rng.random(n) ** (1.0 / N)
    return g * rad[:, None]


def make_rng(seed: Optional[int]) -> np.random.Generator:
    if seed is None:
        raise DomainError("a seed is required for Monte Carlo quadrature")
    return np.random.Generator(np.random.Philox(key=int(seed)))


def monte_carlo(f: Integrand, cyl: Cylinder, spec: QuadratureSpec, chunk: int = 200_000) -> Integral:
    """Plain Monte Carlo with a counter-based generator; error is one standard error."""
    rng = make_rng(spec.seed)
    n = int(spec.mc_samples)
    vol = cyl.volume()
    s1 = 0.0
    s2 = 0.0
    done = 0
    while done < n:
        k = min(chunk, n - done)
        x = cyl.center + cyl.radius * uniform_ball_samples(cyl.N, k, rng)
        t = cyl.t_lo + cyl.duration * rng.random(k)
        if f.radial:
            v = np.asarray(f(np.linalg.norm(x, axis=1), t), dtype=float)
        else:
            v = np.asarray(f(x, t), dtype=float)
        s1 = s1 + v.sum(axis=0)
        s2 = s2 + (v * v).sum(axis=0)
        done += k
    mean = s1 / n
    var = np.maximum(s2 / n - mean * mean, 0.0)
    se = np.sqrt(var / n) * vol
    return Integral(mean * vol, float(np.max(se)), n, "monte_carlo", {"seed": spec.seed})


# ---------------------------------------------------------------- means and norms

def mean(f, cyl: Cylinder, spec: QuadratureSpec = DEFAULT_SPEC, time_splits=()) -> Integral:
    res = integrate(f, cyl, spec, time_splits)
    vol = cyl.volume()
    return Integral(np.asarray(res.value) / vol if np.ndim(res.value) else res.value / vol,
                    res.error / vol, res.evaluations, res.method, res.details)


def slice_mean(f, x_o, radius: float, t: float, spec: QuadratureSpec = DEFAULT_SPEC) -> Integral:
    """Spatial mean over B(x_o, radius) at the single time t."""
    f = as_integrand(f)
    x_o = np.atleast_1d(np.asarray(x_o, dtype=float))
    N = x_o.size
    if f.radial:
        d = float(np.linalg.norm(x_o))

        def values(rho):
            return np.asarray(f(rho, np.full_like(rho, t)), dtype=float)

        total, err, ev, _ = _radial_ball_integral(values, d, radius, N, spec, f.singular_at_origin)
    else:
        cyl = Cylinder(tuple(x_o), t, radius, t - 0.5, t + 0.5, radius)
        g = Integrand(lambda x, tt: f(x, np.full(np.shape(x)[:-1], t)), False)
        res = _integrate_product(g, cyl, replace(spec, time_order=1), ()) if N <= 3 else \
            monte_carlo(g, cyl, spec)
        total, err, ev = res.value, res.error, res.evaluations
    vol = ball_volume(N, radius)
    return Integral(np.asarray(total) / vol, err / vol, ev)


def lp_mean(f, cyl: Cylinder, p: float, spec: QuadratureSpec = DEFAULT_SPEC, time_splits=()) -> Integral:
    """Mean of |f|^p over the cylinder (no p-th root)."""
    if not p > 0:
        raise DomainError("p must be positive")
    fa = as_integrand(f).norm()
    g = Integrand(lambda a, t: np.asarray(fa(a, t)) ** p, fa.radial, fa.singular_at_origin)
    return mean(g, cyl, spec, time_splits)


def sup_norm(f, cyl: Cylinder, grid: int = 65, monotone: bool = False) -> Integral:
    """Supremum of |f| on the (closed) cylinder for radial integrands.

    Radial values are maximised over the rectangle of radii met by the ball
    and the time interval: a grid search polished by bounded optimisation.
    With `monotone=True` the maximum is read off the inner radius at both
    time end points.
    """
    f = as_integrand(f)
    if not f.radial:
        raise DomainError("sup_norm supports radial integrands")
    d = cyl.dist_to_origin()
    r_lo = max(d - cyl.radius, 0.0)
    r_hi = d + cyl.radius
    if r_lo == 0.0 and f.singular_at_origin:
        raise UnboundedSignal("the cylinder reaches the pole at x = 0")

    absval = f.norm()

    if monotone:
        vals = absval(np.array([r_lo, r_lo]), np.array([cyl.t_lo, cyl.t_hi]))
        return Integral(float(np.max(vals)), 0.0, 2, "monotone")
    rr = np.linspace(r_lo, r_hi, grid)
    tt = np.linspace(cyl.t_lo, cyl.t_hi, grid)
    V = absval(rr[None, :], tt[:, None])
    j, i = np.unravel_index(int(np.argmax(V)), V.shape)
    best = float(V[j, i])
    res = optimize.minimize(lambda z: -float(absval(np.array(z[0]), np.array(z[1]))),
                            x0=[rr[i], tt[j]], method="L-BFGS-B",
                            bounds=[(r_lo, r_hi), (cyl.t_lo, cyl.t_hi)])
    polished = max(best, float(-res.fun))
    return Integral(polished, abs(polished - best), grid * grid + res.nfev, "sampling")


def level_radii(g: Callable, t: float, r_lo: float, r_hi: float, level: float, n: int = 257):
    """Radii in [r_lo, r_hi] where g(., t) crosses level (sign changes on a grid + brentq)."""
    rr = np.geomspace(max(r_lo, 1e-300), r_hi, n) if r_lo > 0 and r_hi / r_lo > 50 else np.linspace(r_lo, r_hi, n)
    vals = np.asarray(g(rr, np.full_like(rr, t)), dtype=float) - level
    out = []
    for k in range(n - 1):
        a, b = vals[k], vals[k + 1]
        if a == 0.0:
            out.append(float(rr[k]))
        elif a * b < 0:
            out.append(optimize.brentq(lambda x: float(g(np.array(x), np.array(t))) - level,
                                       rr[k], rr[k + 1], xtol=1e-15 * rr[k + 1] + 1e-300, rtol=1e-15))
    return out


def masked_integral(h, g, level: float, cyl: Cylinder, spec: QuadratureSpec = DEFAULT_SPEC,
                    time_splits=()) -> Integral:
    """Integral of h over {g > level} inside the cylinder (radial h and g).

    Each time node is treated separately so that the level-set radii become
    panel boundaries; the radial integrand is then smooth on every panel.
    """
    h = as_integrand(h)
    g = as_integrand(g)
    if not (h.radial and g.radial):
        raise DomainError("masked_integral needs radial integrands")
    d = cyl.dist_to_origin()
    s = cyl.radius
    r_lo, r_hi = max(d - s, 0.0), d + s
    ts, wt = _time_nodes(cyl.t_lo, cyl.t_hi, spec.time_order, spec.time_panels, time_splits)
    total = 0.0
    err = 0.0
    ev = 0
    singular = h.singular_at_origin
    for tj, wj in zip(ts, wt):
        lo_probe = r_lo if r_lo > 0 else min(spec.r_min * 1e3, r_hi * 1e-9)
        breaks = level_radii(g, tj, lo_probe, r_hi, level)

        def values(rho, tj=tj):
            tt = np.full_like(rho, tj)
            mask = np.asarray(g(rho, tt), dtype=float) > level
            v = np.asarray(h(rho, tt), dtype=float)
            mask = mask.reshape(mask.shape + (1,) * (v.ndim - mask.ndim))
            return np.where(mask, v, 0.0)

        try:
            v, e, n_ev, _ = _radial_ball_integral(values, d, s, cyl.N, spec, singular, tuple(breaks))
        except DivergenceSignal:
            raise
        total = total + wj * v
        err += abs(wj) * e
        ev += n_ev
    return Integral(total, err, ev, "radial-masked")


def superlevel_measure(f, cyl: Cylinder, lam: float, spec: QuadratureSpec = DEFAULT_SPEC,
                       grid_cells: int = 0) -> Integral:
    """Lebesgue measure of {|f| > lam} in the cylinder."""
    if lam < 0:
        raise DomainError("level must be non-negative")
    absval = as_integrand(f).norm()
    one = Integrand(lambda r, t: np.ones(np.broadcast(np.asarray(r), np.asarray(t)).shape), True)
    return masked_integral(one, absval, lam, cyl,
                           replace(spec, time_error=False))
