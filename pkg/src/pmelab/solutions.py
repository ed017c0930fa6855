"""Exact singular solutions, the vector power, and field containers.

Three radial families are provided: the separable extinction profile, a
one-parameter family that reduces to it, and a log-corrected profile at the
critical exponent m = (N-2)/(N+2) that needs a divergence-form forcing.

All evaluators are vectorised over numpy arrays of radius r and time t.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate, interpolate

from .errors import DomainError, SingularityError
from .exponents import critical_m

SEPARABLE = "separable"
KING_KOSOV = "king_kosov"
KOSOV_CRITICAL = "kosov_critical"
KINDS = (SEPARABLE, KING_KOSOV, KOSOV_CRITICAL)


def vpower(u, alpha: float):
    """|u|^(alpha-1) u along the last axis; zero stays zero.

    Scalars and arrays of scalars are treated as one-component vectors
    entry by entry.
    """
    arr = np.asarray(u, dtype=float)
    if arr.ndim == 0:
        a = abs(float(arr))
        return 0.0 if a == 0.0 else float(a ** (alpha - 1.0) * arr)
    norm = np.linalg.norm(arr, axis=-1, keepdims=True) if arr.ndim >= 1 else np.abs(arr)
    out = np.zeros_like(arr)
    nz = np.broadcast_to(norm > 0, arr.shape)
    scale = np.where(norm > 0, np.where(norm > 0, norm, 1.0) ** (alpha - 1.0), 0.0)
    out[nz] = (np.broadcast_to(scale, arr.shape) * arr)[nz]
    return out


def spow(u, alpha: float):
    """Entrywise signed power for scalar fields stored as plain arrays."""
    u = np.asarray(u, dtype=float)
    return np.sign(u) * np.abs(u) ** alpha


# ---------------------------------------------------------------- fields

@dataclass
class RadialField:
    """A k-component field depending on |x| and t only.

    Callables take broadcastable arrays (r, t) and return arrays of shape
    broadcast(r, t) + (k,). `dum` is the radial derivative of the vector
    power of exponent m, `F` the radial component of the forcing.
    """

    N: int
    m: float
    u: Callable
    um: Callable
    dum: Callable
    F: Optional[Callable] = None
    k: int = 1
    name: str = "field"
    provenance: str = "analytic"
    singular_at_origin: bool = False
    r_range: tuple = (0.0, math.inf)
    t_range: tuple = (-math.inf, math.inf)
    radial = True

    def grad_norm(self, r, t):
        d = self.dum(r, t)
        return np.sqrt(np.sum(d * d, axis=-1))

    def u_norm(self, r, t):
        v = self.u(r, t)
        return np.sqrt(np.sum(v * v, axis=-1))

    def F_norm(self, r, t):
        if self.F is None:
            return np.zeros(np.broadcast(np.asarray(r), np.asarray(t)).shape)
        f = self.F(r, t)
        return np.sqrt(np.sum(f * f, axis=-1))

    def has_forcing(self) -> bool:
        return self.F is not None

    def shifted_time(self, dt: float) -> "RadialField":
        """Same field with time axis translated: new(t) = old(t - dt)."""
        F = None if self.F is None else (lambda r, t, f=self.F: f(r, np.asarray(t) - dt))
        return RadialField(
            self.N, self.m,
            lambda r, t: self.u(r, np.asarray(t) - dt),
            lambda r, t: self.um(r, np.asarray(t) - dt),
            lambda r, t: self.dum(r, np.asarray(t) - dt),
            F, self.k, self.name, self.provenance, self.singular_at_origin,
            self.r_range, (self.t_range[0] + dt, self.t_range[1] + dt))


@dataclass
class PointField:
    """A general k-component field of (x, t), x with trailing axis of length N.

    `u` returns (..., k); `dum` returns the Jacobian of the vector power,
    shape (..., k, N); `F` (optional) returns (..., k, N).
    """

    N: int
    m: float
    u: Callable
    dum: Callable
    F: Optional[Callable] = None
    k: int = 1
    name: str = "point-field"
    provenance: str = "analytic"
    singular_at_origin: bool = False
    radial = False

    def um(self, x, t):
        return vpower(self.u(x, t), self.m)

    def grad_norm(self, x, t):
        d = self.dum(x, t)
        return np.sqrt(np.sum(d * d, axis=(-1, -2)))

    def u_norm(self, x, t):
        v = self.u(x, t)
        return np.sqrt(np.sum(v * v, axis=-1))

    def F_norm(self, x, t):
        if self.F is None:
            x = np.asarray(x)
            return np.zeros(np.broadcast(x[..., 0], np.asarray(t)).shape)
        f = self.F(x, t)
        return np.sqrt(np.sum(f * f, axis=(-1, -2)))

    def has_forcing(self) -> bool:
        return self.F is not None


def _stack1(a):
    return np.asarray(a, dtype=float)[..., None]


def constant_field(N: int, m: float, c, name="constant") -> RadialField:
    """Spatially and temporally constant field with value c (scalar or vector)."""
    cv = np.atleast_1d(np.asarray(c, dtype=float))
    cm = vpower(cv, m)
    k = cv.size

    def full(r, t, v):
        shape = np.broadcast(np.asarray(r), np.asarray(t)).shape
        return np.broadcast_to(v, shape + (k,)).copy()

    return RadialField(N, m, lambda r, t: full(r, t, cv), lambda r, t: full(r, t, cm),
                       lambda r, t: full(r, t, np.zeros(k)), None, k, name)


def time_profile_field(N: int, m: float, c: Callable, name="time-profile") -> RadialField:
    """Spatially constant field u(x, t) = c(t); used to build cheap intrinsic systems."""

    def u(r, t):
        shape = np.broadcast(np.asarray(r), np.asarray(t)).shape
        return np.broadcast_to(np.asarray(c(np.asarray(t)), dtype=float), shape)[..., None].copy()

    def um(r, t):
        return spow(u(r, t), m)

    def dum(r, t):
        return np.zeros_like(u(r, t))

    return RadialField(N, m, u, um, dum, None, 1, name)


def zero_field(N: int, m: float) -> RadialField:
    return constant_field(N, m, 0.0, name="zero")


def stack_fields(fields) -> RadialField:
    """Diagonal system u = (u_1, ..., u_k) out of scalar radial fields."""
    fields = list(fields)
    f0 = fields[0]

    def cat(attr):
        def fn(r, t):
            return np.concatenate([getattr(f, attr)(r, t) for f in fields], axis=-1)
        return fn

    F = None
    if any(f.F is not None for f in fields):
        def F(r, t):
            parts = []
            for f in fields:
                if f.F is None:
                    parts.append(np.zeros_like(f.u(r, t)))
                else:
                    parts.append(f.F(r, t))
            return np.concatenate(parts, axis=-1)
    return RadialField(f0.N, f0.m, cat("u"), cat("um"), cat("dum"), F,
                       sum(f.k for f in fields), "+".join(f.name for f in fields),
                       "analytic", any(f.singular_at_origin for f in fields),
                       (max(f.r_range[0] for f in fields), min(f.r_range[1] for f in fields)),
                       (max(f.t_range[0] for f in fields), min(f.t_range[1] for f in fields)))


# ---------------------------------------------------------------- exact solutions

@dataclass(frozen=True)
class ExactSolution:
    kind: str
    N: int
    m: float
    T: float = 1.0
    A: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown solution kind {self.kind!r}")
        if not self.T > 0:
            raise DomainError("extinction time must be positive")
        mc = critical_m(self.N)
        if self.kind == KOSOV_CRITICAL:
            if self.N < 3:
                raise DomainError("the critical profile needs N >= 3")
            if abs(self.m - mc) > 1e-12:
                raise DomainError(f"the critical profile needs m = {mc}")
            object.__setattr__(self, "m", mc)
        else:
            if not (0 < self.m < mc):
                raise DomainError(f"m must lie in (0, {mc}) for the {self.kind} profile")
            if self.kind == KING_KOSOV and self.A < 0:
                raise DomainError("A must be non-negative")

    # -- constants
    @property
    def lam(self) -> float:
        return self.N * (self.m - 1) + 2

    @property
    def K(self) -> float:
        m = self.m
        return (2 * m * abs(self.lam) / (1 - m)) ** (1 / (1 - m))

    @property
    def R(self) -> float:
        """Radius of the ball on which the critical profile is defined."""
        return (self.T / 2) ** (1 / (2 * self.m))

    @property
    def diffusion_coefficient(self) -> float:
        return 1.0 / self.m if self.kind == KOSOV_CRITICAL else 1.0

    @property
    def t_range(self):
        if self.kind == KOSOV_CRITICAL:
            return (0.0, self.T / 2)
        return (-math.inf, math.inf)

    @property
    def r_range(self):
        if self.kind == KOSOV_CRITICAL:
            return (0.0, self.R)
        return (0.0, math.inf)

    # -- domain handling
    def _tau(self, t):
        return np.maximum(self.T - np.asarray(t, dtype=float), 0.0)

    def _check(self, r, t):
        r = np.asarray(r, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any(r < 0):
            raise DomainError("negative radius")
        if np.any(r == 0):
            raise SingularityError("the profile is singular at x = 0")
        if self.kind == KOSOV_CRITICAL:
            if np.any(t <= 0) or np.any(t > self.T / 2 * (1 + 1e-14)):
                raise DomainError("critical profile defined for 0 < t <= T/2 only")
            if np.any(r >= self.R):
                raise DomainError("critical profile defined for |x| < R only")
        return r, t

    def _log_arg(self, r, t):
        tau = self._tau(t)
        z = r * tau ** (-1 / (2 * self.m))
        if np.any(z >= 1):
            raise DomainError("argument of the logarithm must stay below 1")
        return -np.log(z)

    # -- radial profiles
    def u_radial(self, r, t):
        r, t = self._check(r, t)
        m, N = self.m, self.N
        tau = self._tau(t)
        if self.kind == SEPARABLE:
            return self.K * tau ** (1 / (1 - m)) * r ** (-2 / (1 - m))
        if self.kind == KING_KOSOV:
            e1 = (N - 2 - 2 * m) / (2 * m * m)
            B = self._kk_bracket(r, tau)
            with np.errstate(divide="ignore"):
                return np.where(tau > 0, tau ** e1 * B ** (-1 / (1 - m)), 0.0)
        L = self._log_arg(r, t)
        return ((N - 2) * tau / 2) ** ((N + 2) / 4) * r ** (-(N + 2) / 2) * L ** (-(N + 2) / 4)

    def _kk_bracket(self, r, tau):
        m, N = self.m, self.N
        a = (N - 2) * (1 - m) / m
        c = (1 - m) / (2 * m * abs(self.lam))
        e2 = abs(self.lam) / (2 * m * m)
        return self.A * r ** a + c * r * r * tau ** e2

    def um_radial(self, r, t):
        return self.u_radial(r, t) ** self.m

    def dum_radial(self, r, t):
        """Radial derivative of u^m."""
        r, t = self._check(r, t)
        m, N = self.m, self.N
        tau = self._tau(t)
        if self.kind == SEPARABLE:
            return (-(2 * m / (1 - m)) * self.K**m * tau ** (m / (1 - m))
                    * r ** (-(1 + m) / (1 - m)))
        if self.kind == KING_KOSOV:
            e1 = (N - 2 - 2 * m) / (2 * m * m)
            a = (N - 2) * (1 - m) / m
            c = (1 - m) / (2 * m * abs(self.lam))
            e2 = abs(self.lam) / (2 * m * m)
            B = self._kk_bracket(r, tau)
            dB = self.A * a * r ** (a - 1) + 2 * c * r * tau**e2
            with np.errstate(divide="ignore", invalid="ignore"):
                val = tau ** (m * e1) * (-m / (1 - m)) * B ** (-1 / (1 - m)) * dB
            return np.where(tau > 0, val, 0.0)
        L = self._log_arg(r, t)
        P = ((N - 2) * tau / 2) ** ((N - 2) / 4)
        return P * r ** (-N / 2) * L ** (-(N - 2) / 4) * (-(N - 2) / 2 + ((N - 2) / 4) / L)

    # -- the critical forcing
    def kosov_H(self, r, t):
        """Integrand whose primitive G builds the forcing."""
        self._require_critical()
        r, t = self._check(r, t)
        N = self.N
        L = self._log_arg(r, t)
        return r ** ((N - 4) / 2) * (-2 * L ** (-(N - 2) / 4) + L ** (-(N + 2) / 4))

    def kosov_G(self, r, t, tol: float = 1e-10):
        """G(r, t) = int_0^r H(s, t) ds with G(0, t) = 0.

        With s = r e^{-x} the primitive becomes r^{(N-2)/2} times a smooth
        integral over x in (0, inf) that is evaluated by vector-valued
        adaptive Gauss-Kronrod quadrature.
        """
        self._require_critical()
        r, t = self._check(r, t)
        r, t = np.broadcast_arrays(r, t)
        N = self.N
        beta = (N - 2) / 2
        g1, g2 = (N - 2) / 4, (N + 2) / 4
        L = self._log_arg(r, t).ravel()

        def integrand(x):
            y = L + x
            return np.exp(-beta * x) * (-2 * y ** (-g1) + y ** (-g2))

        val, _ = integrate.quad_vec(integrand, 0.0, np.inf, epsabs=tol, epsrel=tol, limit=400)
        return r ** beta * np.asarray(val).reshape(r.shape)

    def kosov_G_asymptotic(self, r, t):
        """Leading behaviour of G as r -> 0."""
        self._require_critical()
        N = self.N
        L = self._log_arg(np.asarray(r, float), np.asarray(t, float))
        return -(4 / (N - 2)) * np.asarray(r) ** ((N - 2) / 2) * L ** (-(N - 2) / 4)

    def _forcing_scale(self, t):
        N = self.N
        tau = self._tau(t)
        return -((N + 2) / 4) * ((N - 2) / 2) ** ((N + 2) / 4) * tau ** ((N - 2) / 4)

    def kosov_forcing(self, r, t):
        """Radial component of the forcing F = F_r e_r."""
        self._require_critical()
        r, t = self._check(r, t)
        return self._forcing_scale(t) * r ** (1 - self.N) * self.kosov_G(r, t)

    def kosov_div_forcing(self, r, t):
        self._require_critical()
        r, t = self._check(r, t)
        return self._forcing_scale(t) * r ** (1 - self.N) * self.kosov_H(r, t)

    def _require_critical(self):
        if self.kind != KOSOV_CRITICAL:
            raise DomainError("forcing exists only for the critical profile")

    # -- point evaluation
    def eval(self, x, t):
        x = np.asarray(x, dtype=float)
        return self.u_radial(np.linalg.norm(x, axis=-1), t)

    def grad_um(self, x, t):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        d = self.dum_radial(r, t)
        return np.asarray(d)[..., None] * x / np.asarray(r)[..., None]

    def forcing(self, x, t):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        return np.asarray(self.kosov_forcing(r, t))[..., None] * x / np.asarray(r)[..., None]

    # -- residual
    def residual(self, x, t, h: float = 1e-3) -> float:
        """Finite-difference residual of d_t u - c Lap u^m - div F at one point.

        Radial derivatives use fourth-order five-point stencils in r and t.
        """
        r = float(np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float))))
        t = float(t)
        lo_r, hi_r = self.r_range
        lo_t, hi_t = self.t_range
        if r - 2 * h <= lo_r or r + 2 * h >= hi_r:
            raise DomainError("radial margin 2h violated")
        if t - 2 * h <= lo_t or t + 2 * h > min(hi_t, self.T):
            raise DomainError("time margin 2h violated")
        offs = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
        d1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12 * h)
        d2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12 * h * h)
        rs = r + offs * h
        ts = t + offs * h
        ut = float(d1 @ self.u_radial(r, ts))
        w = self.um_radial(rs, t)
        lap = float(d2 @ w + (self.N - 1) / r * (d1 @ w))
        res = ut - self.diffusion_coefficient * lap
        if self.kind == KOSOV_CRITICAL:
            Fr = self.kosov_forcing(rs, np.full(5, t))
            div = float(d1 @ Fr + (self.N - 1) / r * Fr[2])
            res -= div
        return res

    # -- field adapter
    def field(self) -> RadialField:
        F = None
        if self.kind == KOSOV_CRITICAL:
            F = lambda r, t: _stack1(self.kosov_forcing(*np.broadcast_arrays(r, t)))
        return RadialField(
            self.N, self.m,
            lambda r, t: _stack1(self.u_radial(r, t)),
            lambda r, t: _stack1(self.um_radial(r, t)),
            lambda r, t: _stack1(self.dum_radial(r, t)),
            F, 1, self.kind, "analytic", True, self.r_range, self.t_range)

    def sample(self, r_grid, t_grid):
        rr, tt = np.meshgrid(np.asarray(r_grid, float), np.asarray(t_grid, float))
        return self.u_radial(rr, tt)


# ---------------------------------------------------------------- sampled fields and CSV

@dataclass
class SampledRadial:
    """Values u[j, i] at times t[j] and radii r[i]."""

    N: int
    m: float
    T: float
    r: np.ndarray
    t: np.ndarray
    u: np.ndarray

    def to_field(self, name="sampled") -> RadialField:
        r, t, U = self.r, self.t, self.u
        W = spow(U, self.m)
        dW = np.gradient(W, r, axis=1, edge_order=2)
        kt = min(3, len(t) - 1)
        kr = min(3, len(r) - 1)
        su = interpolate.RectBivariateSpline(t, r, U, kx=kt, ky=kr)
        sw = interpolate.RectBivariateSpline(t, r, W, kx=kt, ky=kr)
        sd = interpolate.RectBivariateSpline(t, r, dW, kx=kt, ky=kr)

        def ev(spl):
            def fn(rr, tt):
                rr, tt = np.broadcast_arrays(np.asarray(rr, float), np.asarray(tt, float))
                return spl.ev(tt, rr)[..., None]
            return fn

        return RadialField(self.N, self.m, ev(su), ev(sw), ev(sd), None, 1, name,
                           "sampled-grid", False, (float(r[0]), float(r[-1])),
                           (float(t[0]), float(t[-1])))


def write_csv(sample: SampledRadial, path_or_buf=None) -> str:
    """Long-format CSV: a comment line naming N, m, T, then columns r, t, u."""
    buf = io.StringIO()
    buf.write(f"# N={sample.N} m={sample.m!r} T={sample.T!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["r", "t", "u"])
    for j, tj in enumerate(sample.t):
        for i, ri in enumerate(sample.r):
            w.writerow([repr(float(ri)), repr(float(tj)), repr(float(sample.u[j, i]))])
    text = buf.getvalue()
    if path_or_buf is not None:
        with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def read_csv(path_or_text) -> SampledRadial:
    if "\n" in str(path_or_text):
        text = str(path_or_text)
    else:
        with open(path_or_text, encoding="utf-8") as fh:
            text = fh.read()
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DomainError("missing '# N=... m=... T=...' header line")
    meta = dict(item.split("=", 1) for item in lines[0][1:].split())
    rows = list(csv.DictReader(lines[1:]))
    rs = np.array([float(row["r"]) for row in rows])
    ts = np.array([float(row["t"]) for row in rows])
    r_grid = np.unique(rs)
    t_grid = np.unique(ts)
    U = np.full((t_grid.size, r_grid.size), np.nan)
    ir = np.searchsorted(r_grid, rs)
    it = np.searchsorted(t_grid, ts)
    U[it, ir] = [float(row["u"]) for row in rows]
    if np.isnan(U).any():
        raise DomainError("CSV does not describe a full tensor grid")
    return SampledRadial(int(meta["N"]), float(meta["m"]), float(meta["T"]), r_grid, t_grid, U)


def gradient_spike_field(N: int, m: float, r0: float, width: float, height: float,
                         base: float, name="gradient-spike") -> RadialField:
    """Stationary field with u^m = base + height*tanh((r - r0)/width).

    |Du^m| peaks at height/width on the sphere |x| = r0. Needs base > height
    so that u stays positive.
    """
    if not base > abs(height):
        raise DomainError("need base > |height| for a positive field")

    def um(r, t):
        r, t = np.broadcast_arrays(np.asarray(r, float), np.asarray(t, float))
        return (base + height * np.tanh((r - r0) / width))[..., None]

    def u(r, t):
        return um(r, t) ** (1.0 / m)

    def dum(r, t):
        r, t = np.broadcast_arrays(np.asarray(r, float), np.asarray(t, float))
        return (height / width / np.cosh((r - r0) / width) ** 2)[..., None]

    return RadialField(N, m, u, um, dum, None, 1, name)
