"""Exponent calculus for singular porous medium systems.

Every scalar that the regularity theory derives from the quadruple
(N, m, r, p) lives here, together with small simulators for the two
iteration lemmas that drive the boundedness proofs (fast geometric
convergence and the interpolation lemma).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

from .errors import DomainError

REL_TOL = 1e-12


@dataclass(frozen=True)
class Params:
    """Structural parameters: dimension N, exponent m, integrability r and p.

    Inadmissible tuples can be built on purpose; functions that need
    admissibility check for themselves.
    """

    N: int
    m: float
    r: float
    p: float = math.inf

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise DomainError(f"N must be a positive integer, got {self.N}")
        if not self.m > 0:
            raise DomainError(f"m must be positive, got {self.m}")
        if not self.r > 0:
            raise DomainError(f"r must be positive, got {self.r}")
        if not self.p > 0:
            raise DomainError(f"p must be positive, got {self.p}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def lambda_r(self) -> float:
        return lambda_r(self)

    @property
    def subcritical(self) -> bool:
        return self.N >= 3 and self.m <= critical_m(self.N) * (1 + REL_TOL)

    @property
    def admissible(self) -> bool:
        return self.lambda_r > 0 and self.p > (self.N + 2) / 2

    @property
    def kappa(self) -> float:
        return 1.0 + 2.0 / self.N

    def as_dict(self) -> dict:
        return {"N": self.N, "m": self.m, "r": self.r, "p": self.p}


def critical_m(N: int) -> float:
    """(N-2)_+/(N+2), the upper end of the sub-critical range."""
    if N < 1:
        raise DomainError("N must be at least 1")
    return max(N - 2, 0) / (N + 2)


def lambda_s(N: int, m: float, s: float) -> float:
    """N(m-1) + 2s. With s = r this is the admissibility quantity."""
    return N * (m - 1.0) + 2.0 * s


def lambda_r(params: Params) -> float:
    return lambda_s(params.N, params.m, params.r)


def _require_positive_lambda(params: Params) -> float:
    lam = lambda_r(params)
    if lam <= 0:
        raise DomainError(f"N(m-1)+2r = {lam:g} is not positive for {params}")
    return lam


def scaling_deficit(params: Params) -> float:
    """d = 2r/lambda_r; equals 1 only in the heat case m = 1."""
    return 2.0 * params.r / _require_positive_lambda(params)


def q_exponent(params: Params) -> float:
    """Sobolev-Poincare exponent q = rN/(rN + lambda_r), inside (N/(N+2), 1)."""
    lam = _require_positive_lambda(params)
    q = params.r * params.N / (params.r * params.N + lam)
    lo = params.N / (params.N + 2)
    # q is strictly inside the interval unless m = 1 and r = 1 exactly
    if not (lo * (1 - REL_TOL) <= q < 1.0):
        raise DomainError(f"q = {q} escaped ({lo}, 1)")
    return q


def eps_o_separable(N: int, m: float) -> float:
    """Integrability gain of the separable singular solution.

    The gradient of the separable solution lies in L^s near the pole
    exactly for s < 2 + eps_o. Values of m up to and including m_c are
    accepted; at m_c the gain is zero.
    """
    mc = critical_m(N)
    if not (0 < m <= mc * (1 + REL_TOL)) or mc == 0:
        raise DomainError(f"m = {m} is outside the sub-critical range (0, {mc}]")
    val = -(N * (m - 1.0) + 2.0 * (1.0 + m)) / (1.0 + m)
    # the numerator vanishes identically at m_c; kill the rounding residue
    return 0.0 if abs(val) < 1e-13 else val


def moser_alpha(params: Params, i: int) -> float:
    lam = _require_positive_lambda(params)
    N, m = params.N, params.m
    kappa = 1.0 + 2.0 / N
    return lam / (4 * m) * kappa**i - (N * (m - 1) + 2 * (m + 1)) / (4 * m)


def moser_sequence(params: Params, i: int) -> tuple[float, float]:
    """Return (alpha_i, p_i) of the Moser iteration, p_i = 2 alpha_i + (m+1)/m."""
    if i < 0:
        raise DomainError("index must be non-negative")
    a = moser_alpha(params, i)
    return a, 2.0 * a + (params.m + 1.0) / params.m


def moser_increment(params: Params) -> float:
    """Additive constant of 2 alpha_{i+1} = 2 alpha_i kappa + c."""
    N, m = params.N, params.m
    return (N * (m - 1) + 2 * (m + 1)) / (N * m)


def iter_moser_recursion(params: Params) -> Iterator[float]:
    """Yield alpha_0, alpha_1, ... from the one-step recursion only."""
    kappa = params.kappa
    c = moser_increment(params)
    two_alpha = (params.r - params.m - 1.0) / params.m
    while True:
        yield two_alpha / 2.0
        two_alpha = two_alpha * kappa + c


def geometric_sums(N: int) -> tuple[float, float]:
    """Limits of sum_{j>=1} kappa^{1-j} and sum_{j>=1} j kappa^{1-j}, kappa = 1+2/N."""
    if N < 1:
        raise DomainError("N must be at least 1")
    h = (N + 2) / 2
    return h, h * h


def geometric_partial_sums(N: int, n_terms: int) -> tuple[float, float]:
    kappa = 1.0 + 2.0 / N
    s1 = math.fsum(kappa ** (1 - j) for j in range(1, n_terms + 1))
    s2 = math.fsum(j * kappa ** (1 - j) for j in range(1, n_terms + 1))
    return s1, s2


def theta_bound_exponent(params: Params) -> float:
    """((1+m)/(m lambda_r)) (N + 1 + (r+1)/m), the growth rate of theta_rho."""
    lam = _require_positive_lambda(params)
    m = params.m
    return (1 + m) / (m * lam) * (params.N + 1 + (params.r + 1) / m)


# ---------------------------------------------------------------- iteration lemmas

def degiorgi_threshold(C: float, b: float, alpha: float) -> float:
    """Initial size below which Y_{n+1} <= C b^n Y_n^{1+alpha} forces Y_n -> 0."""
    _check_iteration_args(C, b, alpha)
    return C ** (-1.0 / alpha) * b ** (-1.0 / alpha**2)


def _check_iteration_args(C, b, alpha):
    if not (C > 0 and b >= 1 and alpha > 0):
        raise DomainError(f"need C > 0, b >= 1, alpha > 0; got {C}, {b}, {alpha}")


@dataclass(frozen=True)
class IterationVerdict:
    verdict: str  # "converges", "diverges" or "undecided"
    steps: int
    log_last: float


def degiorgi_simulate(Y0: float, C: float, b: float, alpha: float,
                      n_max: int = 200) -> IterationVerdict:
    """Iterate the equality recursion Y_{n+1} = C b^n Y_n^{1+alpha} in log space.

    Divergence: Y_n above 1e6 Y_0 after five consecutive increases.
    Convergence: Y_n below 1e-6 Y_0 while the log-decrements have been
    accelerating for five steps, which is the super-geometric collapse that
    only happens strictly below the threshold.
    """
    _check_iteration_args(C, b, alpha)
    if Y0 < 0:
        raise DomainError("Y0 must be non-negative")
    if Y0 == 0:
        return IterationVerdict("converges", 0, -math.inf)
    lc, lb = math.log(C), math.log(b)
    ly0 = math.log(Y0)
    hist = [ly0]
    rising = 0
    accel = 0
    for n in range(n_max):
        nxt = lc + n * lb + (1.0 + alpha) * hist[-1]
        rising = rising + 1 if nxt > hist[-1] else 0
        if len(hist) >= 2:
            d_prev = hist[-1] - hist[-2]
            d_new = nxt - hist[-1]
            accel = accel + 1 if (d_new < 0 and d_new < d_prev) else 0
        hist.append(nxt)
        if rising >= 5 and nxt > ly0 + math.log(1e6):
            return IterationVerdict("diverges", n + 1, nxt)
        if accel >= 5 and nxt < ly0 - math.log(1e6):
            return IterationVerdict("converges", n + 1, nxt)
    return IterationVerdict("undecided", n_max, hist[-1])


def interpolation_bound(C: float, b: float, alpha: float) -> float:
    """Bound on M_0 for bounded sequences with M_n <= C b^n M_{n+1}^{1-alpha}."""
    if not (C > 0 and b > 1 and 0 < alpha <= 1):
        raise DomainError(f"need C > 0, b > 1, 0 < alpha <= 1; got {C}, {b}, {alpha}")
    return (2.0 * C / b ** (1.0 - 1.0 / alpha)) ** (1.0 / alpha)


def interpolation_sharp_start(C: float, b: float, alpha: float) -> float:
    """Start value whose minimal admissible continuation grows only geometrically.

    Every admissible sequence started above this value is unbounded; the
    interpolation bound exceeds it by the factor 2^{1/alpha}.
    """
    if not (C > 0 and b > 1 and 0 < alpha <= 1):
        raise DomainError("need C > 0, b > 1, 0 < alpha <= 1")
    return C ** (1 / alpha) * b ** ((1 - alpha) / alpha**2)


def interpolation_simulate(M0: float, C: float, b: float, alpha: float,
                           n_max: int = 2000, ceiling: float = 1e300) -> str:
    """Follow the smallest admissible successors M_{n+1} = (M_n / (C b^n))^{1/(1-alpha)}.

    Returns "unbounded" once the sequence has passed `ceiling` with log-increments
    that no longer shrink (every admissible sequence dominates this one),
    "bounded" when it collapses below 1/ceiling, and "undecided" otherwise.
    The increment test matters: just below the sharp start the sequence
    first grows geometrically and only later turns around. For alpha = 1
    the condition is simply M_0 <= C.
    """
    if alpha == 1:
        return "bounded" if M0 <= C else "unbounded"
    lm = math.log(M0)
    lc, lb, lceil = math.log(C), math.log(b), math.log(ceiling)
    prev_inc = None
    steady = 0
    for n in range(n_max):
        nxt = (lm - lc - n * lb) / (1.0 - alpha)
        inc = nxt - lm
        steady = steady + 1 if (prev_inc is not None and inc >= prev_inc * (1 - 1e-12)) else 0
        lm, prev_inc = nxt, inc
        if lm > lceil and steady >= 5:
            return "unbounded"
        if lm < -lceil:
            return "bounded"
    return "undecided"
