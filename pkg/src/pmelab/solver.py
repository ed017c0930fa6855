"""Radial finite-difference solver for u_t = Δu^m + div F on an annulus r_in <= r <= r_out.

Crank-Nicolson in time with the diffusivity m u^{m-1} frozen at an extrapolated
half-step state, so each step is one tridiagonal solve.  Fluxes are written in
conservative control-volume form, which makes the zero-flux mode conserve
the discrete mass to round-off.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .errors import DomainError, StepFailure
from .solutions import SampledRadial

U_FLOOR = 1e-10
RESIDUAL_TOL = 1e-10


@dataclass
class RadialProblem:
    N: int
    m: float
    r_in: float
    r_out: float
    M: int
    u0: Callable[[np.ndarray], np.ndarray]
    t0: float
    t_end: float
    g_in: Optional[Callable[[float], float]] = None
    g_out: Optional[Callable[[float], float]] = None
    F: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    boundary: str = "dirichlet"  # or "zero_flux"
    exact: Optional[Callable[[np.ndarray, float], np.ndarray]] = None

    def __post_init__(self):
        if not self.r_in > 0:
            raise DomainError("r_in must be positive; the origin is excluded")
        if not self.r_out > self.r_in:
            raise DomainError("need r_out > r_in")
        if self.M < 4:
            raise DomainError("grid needs at least 4 cells")
        if self.m <= 0:
            raise DomainError("m must be positive")
        if self.t_end <= self.t0:
            raise DomainError("t_end must exceed t0")
        if self.boundary not in ("dirichlet", "zero_flux"):
            raise DomainError(f"unknown boundary mode {self.boundary!r}")
        if self.boundary == "dirichlet" and (self.g_in is None or self.g_out is None):
            if self.exact is None:
                raise DomainError("Dirichlet mode needs boundary traces or an exact solution")
            ex = self.exact
            self.g_in = self.g_in or (lambda t, ex=ex, r=self.r_in: float(ex(np.array([r]), t)[0]))
            self.g_out = self.g_out or (lambda t, ex=ex, r=self.r_out: float(ex(np.array([r]), t)[0]))
        u = np.asarray(self.u0(self.grid()), float)
        if (u < 0).any():
            raise DomainError("initial profile must be non-negative")

    def grid(self) -> np.ndarray:
        return np.linspace(self.r_in, self.r_out, self.M + 1)

    def refined(self, factor: int) -> "RadialProblem":
        d = dict(self.__dict__)
        d["M"] = self.M * factor
        return RadialProblem(**d)


@dataclass
class DtPolicy:
    """dt = min(dt, cfl * h^2 / max diffusivity) when cfl is given; halving on failure."""

    dt: float
    cfl: Optional[float] = None
    min_dt: float = 1e-14
    n_out: int = 11


@dataclass
class Trajectory:
    sample: SampledRadial
    steps: int
    halvings: int
    mass: np.ndarray

    def field(self, name="solver-trajectory"):
        return self.sample.to_field(name)


def _geometry(r, N):
    h = r[1] - r[0]
    faces = np.concatenate(([r[0]], 0.5 * (r[1:] + r[:-1]), [r[-1]]))
    vol = (faces[1:] ** N - faces[:-1] ** N) / N
    area = faces[1:-1] ** (N - 1)
    return h, faces, vol, area


def _face_diffusivity(u, m):
    if m == 1:
        return np.ones(u.size - 1)
    ub = np.maximum(0.5 * (u[1:] + u[:-1]), U_FLOOR)
    return m * ub ** (m - 1)


def mass(u, r, N):
    return float(np.dot(_geometry(r, N)[2], u))


def solve(problem: RadialProblem, policy: DtPolicy) -> Trajectory:
    p = problem
    r = p.grid()
    N, m = p.N, p.m
    h, faces, vol, area = _geometry(r, N)
    coef = area / h  # face conductance without diffusivity
    dirichlet = p.boundary == "dirichlet"
    u = np.asarray(p.u0(r), float).copy()
    if dirichlet:
        u[0], u[-1] = p.g_in(p.t0), p.g_out(p.t0)
    t_out = np.linspace(p.t0, p.t_end, policy.n_out)
    frames = [u.copy()]
    masses = [mass(u, r, N)]
    u_prev = None
    t = p.t0
    steps = halvings = 0
    k_out = 1

    def operator(D):
        # L u = (1/vol) * sum of face fluxes; returns bands of L
        c = coef * D
        lower = np.zeros(r.size)
        upper = np.zeros(r.size)
        diag = np.zeros(r.size)
        diag[:-1] -= c
        diag[1:] -= c
        upper[:-1] += c
        lower[1:] += c
        return lower / vol, diag / vol, upper / vol

    def forcing(tt):
        if p.F is None:
            return 0.0
        flux = np.zeros(faces.size)
        fi = faces[1:-1]
        flux[1:-1] = fi ** (N - 1) * np.asarray(p.F(fi, tt), float)
        if dirichlet:
            flux[0] = faces[0] ** (N - 1) * float(np.asarray(p.F(faces[:1], tt))[0])
            flux[-1] = faces[-1] ** (N - 1) * float(np.asarray(p.F(faces[-1:], tt))[0])
        return (flux[1:] - flux[:-1]) / vol

    def apply(lo, di, up, x):
        y = di * x
        y[1:] += lo[1:] * x[:-1]
        y[:-1] += up[:-1] * x[1:]
        return y

    while t < p.t_end - 1e-14 * max(1.0, abs(p.t_end)):
        target = t_out[k_out]
        dt = min(policy.dt, target - t)
        if policy.cfl is not None:
            Dmax = float(np.max(_face_diffusivity(u, m)))
            dt = min(dt, policy.cfl * h * h / Dmax)
        while True:
            if dt < policy.min_dt:
                raise StepFailure(f"dt underflow at t={t!r}: dt={dt!r}, "
                                  f"min u={float(u.min())!r}, max diffusivity="
                                  f"{float(np.max(_face_diffusivity(u, m)))!r}")
            if u_prev is None or m == 1:
                # predictor: implicit half step with diffusivity at u
                D = _face_diffusivity(u, m)
                if m != 1:
                    lo, di, up = operator(D)
                    half = _linear_step(u, lo, di, up, 0.5 * dt, 1.0, forcing(t + 0.25 * dt),
                                        dirichlet, p, t + 0.5 * dt, apply)[0]
                    D = _face_diffusivity(half, m)
            else:
                D = _face_diffusivity(u + 0.5 * (u - u_prev) * (dt / dt_last), m)
            lo, di, up = operator(D)
            new, res = _linear_step(u, lo, di, up, dt, 0.5, forcing(t + 0.5 * dt),
                                    dirichlet, p, t + dt, apply)
            if np.all(np.isfinite(new)) and res <= RESIDUAL_TOL and new.min() >= -1e-12:
                break
            dt *= 0.5
            halvings += 1
        u_prev, u, dt_last = u, new, dt
        t += dt
        steps += 1
        if abs(t - target) <= 1e-12 * max(1.0, abs(target)):
            t = target
            frames.append(u.copy())
            masses.append(mass(u, r, N))
            k_out += 1
            if k_out >= t_out.size:
                break
    sample = SampledRadial(N, m, float(p.t_end), r, t_out, np.array(frames))
    return Trajectory(sample, steps, halvings, np.array(masses))


def _linear_step(u, lo, di, up, dt, weight, f, dirichlet, p, t_new, apply):
    """Solve (I - w dt L) x = (I + (1-w) dt L) u + dt f; returns (x, relative residual)."""
    n = u.size
    rhs = u + (1 - weight) * dt * apply(lo, di, up, u) + dt * f
    ab = np.zeros((3, n))
    ab[0, 1:] = -weight * dt * up[:-1]
    ab[1] = 1 - weight * dt * di
    ab[2, :-1] = -weight * dt * lo[1:]
    if dirichlet:
        ab[1, 0] = ab[1, -1] = 1.0
        ab[0, 1] = 0.0
        ab[2, -2] = 0.0
        rhs[0], rhs[-1] = p.g_in(t_new), p.g_out(t_new)
    x = solve_banded((1, 1), ab, rhs)
    Ax = ab[1] * x
    Ax[:-1] += ab[0, 1:] * x[1:]
    Ax[1:] += ab[2, :-1] * x[:-1]
    scale = max(float(np.max(np.abs(rhs))), 1e-300)
    res = float(np.max(np.abs(Ax - rhs))) / scale
    return x, res


def l2_error(traj: Trajectory, exact, frame: int = -1) -> float:
    """Relative L^2(r^{N-1} dr) error of one output frame against an exact profile."""
    s = traj.sample
    r = s.r
    vol = _geometry(r, s.N)[2]
    ue = np.asarray(exact(r, float(s.t[frame])), float)
    diff = s.u[frame] - ue
    num = math.sqrt(float(np.dot(vol, diff * diff)))
    den = math.sqrt(float(np.dot(vol, ue * ue)))
    return num / den if den > 0 else num


@dataclass
class ConvergenceResult:
    Ms: list
    errors: list
    orders: list
    order: float
    exact: bool

    def to_dict(self):
        return {"M": self.Ms, "errors": self.errors, "orders": self.orders,
                "order": "exact" if self.exact else self.order}


def convergence_order(problem: RadialProblem, policy: DtPolicy,
                      refinements: Sequence[int] = (1, 2, 4)) -> ConvergenceResult:
    """Observed order from dyadic refinements with dt shrinking alongside h."""
    if problem.exact is None:
        raise DomainError("convergence_order needs an exact reference")
    Ms, errs = [], []
    for f in refinements:
        pr = problem.refined(f)
        pol = DtPolicy(policy.dt / f, policy.cfl, policy.min_dt, policy.n_out)
        errs.append(l2_error(solve(pr, pol), problem.exact))
        Ms.append(pr.M)
    if max(errs) < 1e-12:
        return ConvergenceResult(Ms, errs, [], math.nan, True)
    orders = [math.log(errs[i] / errs[i + 1]) / math.log(Ms[i + 1] / Ms[i])
              for i in range(len(errs) - 1)]
    return ConvergenceResult(Ms, errs, orders, float(np.mean(orders)), False)


# reference problems used by tests and the CLI

def heat_kernel(N: int):
    def u(r, t):
        return (4 * math.pi * t) ** (-N / 2) * np.exp(-np.asarray(r, float) ** 2 / (4 * t))
    return u


def heat_problem(N=3, M=400, r_in=0.5, r_out=2.0, t0=0.25, t_end=0.5) -> RadialProblem:
    ex = heat_kernel(N)
    return RadialProblem(N, 1.0, r_in, r_out, M, lambda r: ex(r, t0), t0, t_end, exact=ex)


def separable_problem(N=3, m=0.1, M=400, r_in=0.5, r_out=2.0, T=1.0, window=0.5) -> RadialProblem:
    from .solutions import ExactSolution
    sol = ExactSolution("separable", N, m, T)

    def ex(r, t):
        return np.asarray(sol.u_radial(np.asarray(r, float), t), float)
    return RadialProblem(N, m, r_in, r_out, M, lambda r: ex(r, 0.0), 0.0, window, exact=ex)


def constant_problem(c=2.0, N=3, m=0.5, M=100) -> RadialProblem:
    def ex(r, t):
        return np.full(np.shape(r), c, float)
    return RadialProblem(N, m, 0.5, 2.0, M, lambda r: ex(r, 0), 0.0, 1.0, exact=ex)
