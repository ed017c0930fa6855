"""Run configurations, command runners and the HTTP surface.

A run is one JSON document validated into RunConfig. Every command runner
returns a RunResult: the files it would write (name -> text), a list of
named verdicts and the exit code they imply. The CLI writes the files to
disk; the HTTP app returns them in the response body. Both call the same
runner, so the two surfaces cannot drift apart.
"""
from __future__ import annotations

import csv
import io
import json
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from typing import Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__
from .errors import (ConfigError, DivergenceSignal, DomainError, LabError, NotApplicable,
                     OverflowSignal, PreconditionUnmet, StepFailure, UnboundedSignal)
from .exponents import (Params, critical_m, eps_o_separable, lambda_r, q_exponent,
                        scaling_deficit, theta_bound_exponent)
from .geometry import Integrand, QuadratureSpec, intrinsic, make_rng, one_sided
from .report import Report, signal_report

EXIT_OK = 0
EXIT_VERDICT = 2
EXIT_UNMET = 3
EXIT_CONFIG = 4

COMMANDS = ("exponents", "solution", "probe", "cylinders", "cover", "verify", "solve")

CHECK_KINDS = ("energy", "energy-phi", "energy-degiorgi", "gluing", "poincare", "revholder",
               "theta-bound", "supbound", "main", "fubini", "power-ineq")

CYLINDER_ANCHOR = "non-uniform system of sub-intrinsic cylinders"
COVER_ANCHOR = "Vitali-type covering of intrinsic cylinders"
SOLUTION_ANCHOR = "explicit unbounded solutions of the prototype equation"
SOLVE_ANCHOR = "radial finite-difference solver cross-check"
FUBINI_ANCHOR = "layer-cake exchange for the truncated gradient"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------- config schema

class ParamsModel(_Strict):
    N: int = Field(ge=1)
    m: float = Field(gt=0)
    r: float = Field(gt=0)
    p: Optional[float] = Field(default=None, gt=0, description="null means p = infinity")

    def build(self) -> Params:
        return Params(self.N, self.m, self.r, math.inf if self.p is None else self.p)


class FieldModel(_Strict):
    kind: Literal["separable", "king_kosov", "kosov_critical", "constant", "zero",
                  "gradient_spike"] = "separable"
    T: float = Field(default=1.0, gt=0)
    A: float = Field(default=0.0, ge=0)
    c: float = 1.0
    r0: float = 1.0
    width: float = 0.02
    height: float = 0.06
    base: float = 0.126


class QuadratureModel(_Strict):
    method: Literal["auto", "radial", "product", "monte_carlo"] = "auto"
    rtol: float = Field(default=1e-8, gt=0)
    radial_points: int = Field(default=32, ge=4)
    time_order: int = Field(default=16, ge=2)
    mc_samples: int = Field(default=200_000, ge=100)

    def build(self, seed: Optional[int]) -> QuadratureSpec:
        return QuadratureSpec(radial_points=self.radial_points, time_order=self.time_order,
                              rtol=self.rtol, mc_samples=self.mc_samples, seed=seed,
                              method=self.method)


class ExponentsSection(_Strict):
    N: list[int] = [3]
    m: list[float] = [0.2]
    r: list[float] = [2.0]
    p: list[Optional[float]] = [None]


class SolutionSection(_Strict):
    points: Optional[list[tuple[float, float]]] = Field(
        default=None, description="(|x|, t) pairs; default is the standard point per kind")
    random_points: int = Field(default=0, ge=0)
    h: float = Field(default=1e-3, gt=0)
    tol: Optional[float] = None
    asymptotic_r: float = Field(default=1e-6, gt=0)
    asymptotic_t: float = 0.5


class ProbeSection(_Strict):
    s_grid: Optional[list[float]] = None
    J: int = Field(default=120, ge=8)
    j0: int = Field(default=4, ge=1)
    target: Optional[float] = None
    rel_tol: float = 0.05
    upper_bound: Optional[float] = None


class CylindersSection(_Strict):
    x_o: list[float]
    t_o: float = 0.0
    R: float = Field(gt=0)
    lambda_o: Optional[float] = Field(default=None, ge=1)
    rho_min: float = Field(gt=0)
    per_decade: int = Field(default=64, ge=2)


class CoverSection(_Strict):
    families: int = Field(default=200, ge=1)
    max_size: int = Field(default=30, ge=1)
    c_hat: Union[Literal["proof"], float] = "proof"
    r_top: float = Field(default=0.05, gt=0)
    classes: int = Field(default=4, ge=1)
    box: float = Field(default=0.1, gt=0)
    time_spread: float = Field(default=4.0, gt=0)
    lambda_o: float = Field(default=1.0, ge=1)
    rho_min_factor: float = Field(default=8.5, gt=1)
    grid_points: int = Field(default=32, ge=2)


class CheckModel(_Strict):
    kind: Literal["energy", "energy-phi", "energy-degiorgi", "gluing", "poincare", "revholder",
                  "theta-bound", "supbound", "main", "fubini", "power-ineq"]
    name: Optional[str] = None
    expect: Literal["finite", "divergent", "unmet", "any"] = "finite"
    field: Optional[FieldModel] = None
    x_o: Optional[list[float]] = None
    t_o: float = 0.0
    rho: Optional[float] = None
    r_in: Optional[float] = None
    theta: Optional[float] = None
    S: Optional[float] = None
    sigma: float = 0.5
    eps: float = 0.2
    geometry: Literal["intrinsic", "standard"] = "intrinsic"
    K: float = 1.0
    k: Optional[float] = None
    alpha: float = 1.0
    ell: float = 2.0
    lam1: Optional[float] = None
    q: float = 0.5
    n_lambda: int = Field(default=512, ge=8)
    samples: int = Field(default=100_000, ge=100)
    dim: int = Field(default=3, ge=1)


class VerifySection(_Strict):
    checks: list[CheckModel]


class SolveSection(_Strict):
    problem: Literal["heat", "separable", "constant"] = "heat"
    N: int = 3
    m: float = 0.1
    M: int = Field(default=400, ge=16)
    dt: Optional[float] = Field(default=None, gt=0)
    refinements: list[int] = [1, 2, 4]
    max_error: Optional[float] = None
    min_order: Optional[float] = None


class RunConfig(_Strict):
    command: Literal["exponents", "solution", "probe", "cylinders", "cover", "verify", "solve"]
    seed: Optional[int] = Field(default=None, ge=0, lt=2**64)
    params: Optional[ParamsModel] = None
    field: FieldModel = FieldModel()
    quadrature: QuadratureModel = QuadratureModel()
    exponents: Optional[ExponentsSection] = None
    solution: Optional[SolutionSection] = None
    probe: Optional[ProbeSection] = None
    cylinders: Optional[CylindersSection] = None
    cover: Optional[CoverSection] = None
    verify: Optional[VerifySection] = None
    solve: Optional[SolveSection] = None

    @model_validator(mode="after")
    def _consistent(self):
        needs_params = {"probe", "cylinders", "cover", "verify", "solution"}
        if self.command in needs_params and self.params is None:
            raise ValueError(f"command {self.command!r} needs a 'params' section")
        section = getattr(self, self.command)
        if section is None and self.command in ("cylinders", "verify"):
            raise ValueError(f"command {self.command!r} needs a '{self.command}' section")
        if self.seed is None:
            if self.quadrature.method == "monte_carlo":
                raise ValueError("seed is mandatory with Monte Carlo quadrature")
            if self.command == "cover":
                raise ValueError("seed is mandatory for randomized covering families")
            if self.command == "solution" and self.solution and self.solution.random_points:
                raise ValueError("seed is mandatory for random residual sample points")
            if self.command == "verify" and any(c.kind == "power-ineq" for c in self.verify.checks):
                raise ValueError("seed is mandatory for the Monte Carlo power-inequality check")
        return self


def format_validation_error(exc: ValidationError) -> list[str]:
    out = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        out.append(f"{path}: {err['msg']}")
    return out


def load_config(data: Union[str, dict], seed: Optional[int] = None) -> RunConfig:
    """Validate a JSON text or dict; raises ConfigError listing every offending path."""
    try:
        if isinstance(data, str):
            data = json.loads(data)
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data = dict(data)
        if seed is not None:
            data["seed"] = seed
        return RunConfig.model_validate(data)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    except ValidationError as exc:
        raise ConfigError("; ".join(format_validation_error(exc))) from None


# ---------------------------------------------------------------- results

class Verdict(BaseModel):
    name: str
    passed: bool
    anchor: str
    detail: str = ""


class RunResult(BaseModel):
    command: str
    exit_code: int
    verdicts: list[Verdict]
    unmet: int = 0
    files: dict[str, str]


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    from .report import _clean
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                    for v in row])
    return buf.getvalue()


def _finish(command, verdicts, files, unmet=0, fatal_unmet=False) -> RunResult:
    code = EXIT_OK
    if not all(v.passed for v in verdicts):
        code = EXIT_VERDICT
    elif fatal_unmet and unmet:
        code = EXIT_UNMET
    summary = {"command": command, "version": __version__, "exit_code": code, "unmet": unmet,
               "verdicts": [v.model_dump() for v in verdicts]}
    files = dict(files)
    files["verdicts.json"] = dumps(summary)
    return RunResult(command=command, exit_code=code, verdicts=verdicts, unmet=unmet, files=files)


# ---------------------------------------------------------------- field construction

def build_field(fm: FieldModel, N: int, m: float):
    from .solutions import ExactSolution, constant_field, gradient_spike_field, zero_field
    if fm.kind in ("separable", "king_kosov", "kosov_critical"):
        return ExactSolution(fm.kind, N, m, fm.T, fm.A).field()
    if fm.kind == "constant":
        return constant_field(N, m, fm.c)
    if fm.kind == "zero":
        return zero_field(N, m)
    return gradient_spike_field(N, m, fm.r0, fm.width, fm.height, fm.base)


def _solution(fm: FieldModel, N: int, m: float):
    from .solutions import ExactSolution
    if fm.kind not in ("separable", "king_kosov", "kosov_critical"):
        raise ConfigError(f"field kind {fm.kind!r} is not an exact solution")
    return ExactSolution(fm.kind, N, m, fm.T, fm.A)


def _x(x_o, N):
    if x_o is None:
        raise ConfigError("check needs 'x_o'")
    x = np.asarray(x_o, float)
    if x.size != N:
        raise ConfigError(f"x_o has {x.size} entries, expected N = {N}")
    return x


def _need(value, name):
    if value is None:
        raise ConfigError(f"check needs {name!r}")
    return value


# ---------------------------------------------------------------- exponents

def run_exponents(cfg: RunConfig, jobs: int = 1, fatal_unmet: bool = False) -> RunResult:
    sec = cfg.exponents or ExponentsSection()
    header = ["N", "m", "r", "p", "m_c", "lambda_r", "d", "q", "eps_o", "theta_exponent",
              "subcritical", "admissible"]
    rows, records = [], []
    for N in sec.N:
        for m in sec.m:
            for r in sec.r:
                for p in sec.p:
                    P = Params(N, m, r, math.inf if p is None else p)
                    rec = {"N": N, "m": m, "r": r, "p": P.p, "m_c": critical_m(N),
                           "lambda_r": lambda_r(P)}
                    for key, fn in (("d", scaling_deficit), ("q", q_exponent),
                                    ("theta_exponent", theta_bound_exponent)):
                        try:
                            rec[key] = fn(P)
                        except DomainError:
                            rec[key] = None
                    try:
                        rec["eps_o"] = eps_o_separable(N, m)
                    except DomainError:
                        rec["eps_o"] = None
                    rec["subcritical"] = P.subcritical
                    rec["admissible"] = P.admissible
                    records.append(rec)
                    rows.append([rec[h] if not isinstance(rec[h], bool) else str(rec[h]).lower()
                                 for h in header])
    files = {"exponents.csv": _csv(header, rows), "exponents.json": dumps(records)}
    return _finish("exponents", [], files)


# ---------------------------------------------------------------- solution

_DEFAULT_POINTS = {"separable": [(1.0, 0.0)], "king_kosov": [(1.0, 0.0)],
                   "kosov_critical": [(0.3, 0.5)]}
_DEFAULT_TOL = {"separable": 1e-4, "king_kosov": 1e-4, "kosov_critical": 1e-3}


def run_solution(cfg: RunConfig, jobs: int = 1, fatal_unmet: bool = False) -> RunResult:
    P = cfg.params.build()
    sol = _solution(cfg.field, P.N, P.m)
    sec = cfg.solution or SolutionSection()
    tol = sec.tol if sec.tol is not None else _DEFAULT_TOL[sol.kind]
    if sec.points is not None:
        pts = [tuple(p) for p in sec.points]
    else:
        # the standard point sits at T - t = T for the explicit families
        pts = [(r, t if sol.kind == "kosov_critical" else max(sol.T - 1.0, 0.0))
               for r, t in _DEFAULT_POINTS[sol.kind]]
    if sec.random_points:
        rng = make_rng(cfg.seed)
        lo_r, hi_r = (0.5, 2.0) if sol.kind != "kosov_critical" else (0.1 * sol.R, 0.6 * sol.R)
        hi_t = 0.5 * sol.T if sol.kind != "kosov_critical" else 0.45 * sol.T
        for _ in range(sec.random_points):
            pts.append((float(rng.uniform(lo_r, hi_r)), float(rng.uniform(0.1 * hi_t, hi_t))))
    rows, verdicts, records = [], [], []
    for r, t in pts:
        try:
            res = sol.residual(np.array([r] + [0.0] * (P.N - 1)), t, sec.h)
            u = float(sol.u_radial(r, t))
            ok = abs(res) < tol
            records.append({"r": r, "t": t, "u": u, "residual": res, "passed": ok})
            rows.append([r, t, u, res])
            verdicts.append(Verdict(name=f"residual r={r!r} t={t!r}", passed=ok,
                                    anchor=SOLUTION_ANCHOR, detail=f"|res|={abs(res):.3e} tol={tol:g}"))
        except LabError as exc:
            records.append({"r": r, "t": t, "error": str(exc)})
            verdicts.append(Verdict(name=f"residual r={r!r} t={t!r}", passed=False,
                                    anchor=SOLUTION_ANCHOR, detail=str(exc)))
    out = {"kind": sol.kind, "N": sol.N, "m": sol.m, "T": sol.T, "A": sol.A, "h": sec.h,
           "tol": tol, "residuals": records}
    if sol.kind == "kosov_critical":
        r, t = sec.asymptotic_r, sec.asymptotic_t
        ratio = float(sol.kosov_G(r, t) / sol.kosov_G_asymptotic(r, t))
        out["G_ratio"] = {"r": r, "t": t, "ratio": ratio}
        verdicts.append(Verdict(name="G asymptotic ratio", passed=0.9 <= ratio <= 1.1,
                                anchor=SOLUTION_ANCHOR, detail=f"ratio={ratio:.6f}"))
    files = {"solution.json": dumps(out), "residuals.csv": _csv(["r", "t", "u", "residual"], rows)}
    return _finish("solution", verdicts, files)


# ---------------------------------------------------------------- probe

def run_probe(cfg: RunConfig, jobs: int = 1, fatal_unmet: bool = False) -> RunResult:
    from .verify import probe_integrability
    P = cfg.params.build()
    sol = _solution(cfg.field, P.N, P.m)
    sec = cfg.probe or ProbeSection()
    res = probe_integrability(sol, sec.s_grid, J=sec.J, j0=sec.j0)
    rep = res.report(sol)
    verdicts = []
    target = sec.target
    if target is None and sol.kind == "separable":
        target = eps_o_separable(sol.N, sol.m)
    if target is not None:
        ok = abs(res.critical_eps - target) <= sec.rel_tol * abs(target)
        verdicts.append(Verdict(name="critical_eps near target", passed=ok, anchor=rep.anchor,
                                detail=f"estimate={res.critical_eps:.6f} target={target:.6f}"))
    if sec.upper_bound is not None:
        verdicts.append(Verdict(name="critical_eps below bound",
                                passed=res.critical_eps < sec.upper_bound, anchor=rep.anchor,
                                detail=f"estimate={res.critical_eps:.6f} bound={sec.upper_bound:g}"))
    rows = [[s, sl, r2] for s, sl, r2 in zip(res.s_grid, res.slopes, res.r_squared)]
    files = {"probe.json": rep.to_json() + "\n",
             "probe.csv": _csv(["s", "slope", "r_squared"], rows)}
    return _finish("probe", verdicts, files)


# ---------------------------------------------------------------- cylinders

def run_cylinders(cfg: RunConfig, jobs: int = 1, fatal_unmet: bool = False) -> RunResult:
    from .intrinsic import build_theta_system, lambda_o_of, radius_grid, validate_system
    P = cfg.params.build()
    fld = build_field(cfg.field, P.N, P.m)
    sec = cfg.cylinders
    x = _x(sec.x_o, P.N)
    lam_o = sec.lambda_o
    if lam_o is None:
        lam_o = lambda_o_of(fld, intrinsic(x, sec.t_o, 4 * sec.R, 1.0, P.m), P)
    grid = radius_grid(sec.R, sec.rho_min, sec.per_decade)
    pool = ThreadPoolExecutor(jobs) if jobs > 1 else None
    try:
        system = build_theta_system(fld, (x, sec.t_o), sec.R, lam_o, P, grid=grid,
                                    validate=False, pool=pool)
    finally:
        if pool is not None:
            pool.shutdown()
    checks = validate_system(system)
    verdicts = [Verdict(name=k, passed=bool(v), anchor=CYLINDER_ANCHOR)
                for k, v in checks.items() if isinstance(v, (bool, np.bool_))]
    out = {"lambda_o": lam_o, "R": sec.R, "x_o": list(x), "t_o": sec.t_o, "params": P.as_dict(),
           "field": cfg.field.model_dump(), "points": len(system.rhos),
           "verdicts": {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                        for k, v in checks.items()}}
    files = {"theta_system.csv": system.to_csv(), "cylinders.json": dumps(out)}
    return _finish("cylinders", verdicts, files)


# ---------------------------------------------------------------- cover

def random_family(rng, system, sec: CoverSection, N: int) -> list:
    from .intrinsic import Candidate
    n = int(rng.integers(1, sec.max_size + 1))
    out = []
    for _ in range(n):
        j = int(rng.integers(1, sec.classes + 1))
        r = sec.r_top / 2 ** (j - 1) * (1 - 1e-9)
        th = system.theta_at(r)
        x = tuple(float(v) for v in rng.uniform(-sec.box, sec.box, N))
        t = float(rng.uniform(-1, 1) * sec.time_spread * r ** ((1 + system.params.m) / system.params.m))
        out.append(Candidate(x, t, r, th))
    return out


def run_cover(cfg: RunConfig, jobs: int = 1, fatal_unmet: bool = False) -> RunResult:
    from .intrinsic import build_theta_system, c_hat, c_hat_impractical, radius_grid, vitali_cover
    P = cfg.params.build()
    fld = build_field(cfg.field, P.N, P.m)
    sec = cfg.cover or CoverSection()
    chat = c_hat(P) if sec.c_hat == "proof" else float(sec.c_hat)
    system = build_theta_system(fld, (np.zeros(P.N), 0.0), sec.r_top, sec.lambda_o, P,
                                grid=radius_grid(sec.r_top, sec.r_top / sec.rho_min_factor,
                                                 sec.grid_points))
    rng = make_rng(cfg.seed)
    R = chat * sec.r_top
    fams, n_bad = [], 0
    for _ in range(sec.families):
        fam = vitali_cover(random_family(rng, system, sec, P.N), P, R, chat=chat)
        fams.append(json.loads(fam.to_json()))
        n_bad += (not fam.disjoint) or (not fam.contained)
    out = {"c_hat": chat, "c_hat_mode": "proof" if sec.c_hat == "proof" else "test",
           "c_hat_impractical": c_hat_impractical(P), "R": R, "families": fams,
           "failures": n_bad}
    verdicts = [Verdict(name="disjoint", passed=all(f["disjoint"] for f in fams), anchor=COVER_ANCHOR),
                Verdict(name="contained", passed=all(f["contained"] for f in fams), anchor=COVER_ANCHOR)]
    return _finish("cover", verdicts, {"cover.json": dumps(out)})


# ---------------------------------------------------------------- verify

def run_check(check: dict, cfg_dict: dict) -> dict:
    """Run one checker; module-level so process pools can pickle it."""
    from . import verify as V
    from .intrinsic import fubini_identity_check
    cfg = RunConfig.model_validate(cfg_dict)
    ck = CheckModel.model_validate(check)
    P = cfg.params.build()
    spec = cfg.quadrature.build(cfg.seed)
    fm = ck.field or cfg.field
    name = ck.name or ck.kind
    try:
        if ck.kind == "power-ineq":
            rep = V.check_power_inequalities(ck.alpha, ck.samples, ck.dim, seed=cfg.seed)
        else:
            fld = build_field(fm, P.N, P.m)
            x = _x(ck.x_o, P.N)
            z = (x, ck.t_o)
            if ck.kind == "energy":
                rho = _need(ck.rho, "rho")
                rep = V.check_energy(fld, z, rho, ck.r_in or 0.75 * rho, ck.theta or 1.0, P, spec=spec)
            elif ck.kind == "gluing":
                rep = V.check_gluing(fld, z, _need(ck.rho, "rho"), ck.theta or 1.0, P, spec=spec)
            elif ck.kind in ("energy-phi", "energy-degiorgi", "supbound", "fubini"):
                rho = _need(ck.rho, "rho")
                S = ck.S if ck.S is not None else rho ** ((1 + P.m) / P.m)
                Q = one_sided(x, ck.t_o, rho, S)
                if ck.kind == "energy-phi":
                    rep = V.check_energy_phi(fld, Q, V.PhiTestFn(ck.alpha, _need(ck.k, "k"), ck.ell, P.m), P)
                elif ck.kind == "energy-degiorgi":
                    rep = V.check_energy_degiorgi(fld, Q, _need(ck.k, "k"), P)
                elif ck.kind == "supbound":
                    rep = V.check_supbound(fld, Q, ck.sigma, P, spec=spec)
                else:
                    g = Integrand(lambda r, t: fld.grad_norm(r, t), True, False)
                    rep = fubini_identity_check(g, _need(ck.k, "k"), _need(ck.lam1, "lam1"), ck.eps,
                                                Q, P.m, ck.q, ck.n_lambda)
                    rep.anchor = FUBINI_ANCHOR
            elif ck.kind == "poincare":
                rep = V.check_poincare(fld, z, _need(ck.rho, "rho"), P, theta=ck.theta, K=ck.K, spec=spec)
            elif ck.kind == "revholder":
                rep = V.check_revholder(fld, z, _need(ck.rho, "rho"), P, theta=ck.theta, K=ck.K, spec=spec)
            elif ck.kind == "theta-bound":
                rep = V.check_theta_bound(fld, z, _need(ck.rho, "rho"), P, theta=ck.theta, spec=spec)
            else:
                rep = V.check_main_estimate(fld, z, _need(ck.rho, "rho"), ck.eps, P, ck.geometry, spec=spec)
    except PreconditionUnmet as exc:
        rep = signal_report(ck.kind, _check_anchor(ck.kind), "precondition-unmet", str(exc),
                            seed=cfg.seed)
    except (DivergenceSignal, OverflowSignal) as exc:
        rep = signal_report(ck.kind, _check_anchor(ck.kind), "divergent", str(exc), seed=cfg.seed)
    except UnboundedSignal as exc:
        rep = signal_report(ck.kind, _check_anchor(ck.kind), "unbounded", str(exc), seed=cfg.seed)
    except NotApplicable as exc:
        rep = signal_report(ck.kind, _check_anchor(ck.kind), "not-applicable", str(exc), seed=cfg.seed)
    except (DomainError, ConfigError) as exc:
        rep = signal_report(ck.kind, _check_anchor(ck.kind), "error", str(exc), seed=cfg.seed)
    d = rep.to_dict()
    d["name"] = name
    d["expect"] = ck.expect
    return d


def _check_anchor(kind: str) -> str:
    from .verify import ANCHORS
    key = {"energy-phi": "energy_phi", "energy-degiorgi": "energy_degiorgi",
           "theta-bound": "theta_bound", "power-ineq": "power"}.get(kind, kind)
    return ANCHORS.get(key, FUBINI_ANCHOR)


def _verdict_of(d: dict) -> Optional[Verdict]:
    status = d.get("status")
    expect = d["expect"]
    ratio = d.get("ratio")
    finite = status == "ok" and isinstance(ratio, (int, float)) and math.isfinite(ratio)
    if status == "precondition-unmet" and expect != "unmet":
        return None
    passed = {"finite": finite, "divergent": status in ("divergent", "unbounded"),
              "unmet": status == "precondition-unmet", "any": status != "error"}[expect]
    return Verdict(name=d["name"], passed=passed, anchor=d["anchor"],
                   detail=f"status={status} ratio={ratio}")


def _pool_map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as ex:
        # map preserves submission order, so output order follows the config
        return list(ex.map(fn, *zip(*items)))


def run_verify(cfg: RunConfig, jobs: int = 1, fatal_unmet: bool = False) -> RunResult:
    cfg_dict = cfg.model_dump()
    items = [(c.model_dump(), cfg_dict) for c in cfg.verify.checks]
    reports = _pool_map(run_check, items, jobs)
    verdicts, unmet = [], 0
    for d in reports:
        unmet += d.get("status") == "precondition-unmet"
        v = _verdict_of(d)
        if v is not None:
            verdicts.append(v)
    header = ["name", "check", "anchor", "status", "lhs", "rhs", "ratio", "branch", "seed",
              "quadrature_error"]
    rows = [[d["name"], d["check"], d["anchor"], d["status"], d["lhs"], d["rhs"], d["ratio"],
             d["branch"], d["seed"], d["quadrature_error"]] for d in reports]
    files = {"reports.json": dumps(reports), "reports.csv": _csv(header, rows)}
    return _finish("verify", verdicts, files, unmet, fatal_unmet)


# ---------------------------------------------------------------- solve

def run_solve(cfg: RunConfig, jobs: int = 1, fatal_unmet: bool = False) -> RunResult:
    from . import solver as S
    from .solutions import write_csv
    sec = cfg.solve or SolveSection()
    base = sec.M // max(sec.refinements)
    if sec.problem == "heat":
        pb = S.heat_problem(sec.N, base)
    elif sec.problem == "separable":
        pb = S.separable_problem(sec.N, sec.m, base)
    else:
        pb = S.constant_problem(2.0, sec.N, sec.m, base)
    dt = sec.dt if sec.dt is not None else (pb.t_end - pb.t0) / base
    verdicts = []
    try:
        conv = S.convergence_order(pb, S.DtPolicy(dt), sec.refinements)
        finest = S.solve(pb.refined(max(sec.refinements)), S.DtPolicy(dt / max(sec.refinements)))
    except StepFailure as exc:
        verdicts.append(Verdict(name="step", passed=False, anchor=SOLVE_ANCHOR, detail=str(exc)))
        return _finish("solve", verdicts, {"convergence.json": dumps({"error": str(exc)})})
    err = conv.errors[-1]
    if sec.max_error is not None:
        verdicts.append(Verdict(name="finest error", passed=err < sec.max_error, anchor=SOLVE_ANCHOR,
                                detail=f"error={err:.3e}"))
    if sec.min_order is not None:
        ok = conv.exact or conv.order >= sec.min_order
        verdicts.append(Verdict(name="observed order", passed=ok, anchor=SOLVE_ANCHOR,
                                detail=f"order={conv.to_dict()['order']}"))
    out = {"problem": sec.problem, "N": pb.N, "m": pb.m, "interval": [pb.r_in, pb.r_out],
           "time": [pb.t0, pb.t_end], "dt_base": dt, **conv.to_dict(),
           "steps": finest.steps, "halvings": finest.halvings,
           "mass_drift": float(abs(finest.mass[-1] - finest.mass[0]) / finest.mass[0])}
    files = {"convergence.json": dumps(out), "trajectory.csv": write_csv(finest.sample)}
    return _finish("solve", verdicts, files)


RUNNERS = {"exponents": run_exponents, "solution": run_solution, "probe": run_probe,
           "cylinders": run_cylinders, "cover": run_cover, "verify": run_verify, "solve": run_solve}


def execute(cfg: RunConfig, jobs: int = 1, fatal_unmet: bool = False) -> RunResult:
    try:
        return RUNNERS[cfg.command](cfg, jobs=jobs, fatal_unmet=fatal_unmet)
    except PreconditionUnmet as exc:
        v = Verdict(name="precondition", passed=not fatal_unmet, anchor=cfg.command, detail=str(exc))
        return _finish(cfg.command, [v], {}, unmet=1, fatal_unmet=fatal_unmet)


# ---------------------------------------------------------------- HTTP surface

def create_app():
    from fastapi import FastAPI, HTTPException

    app = FastAPI(title="pmelab", version=__version__)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    def endpoint(command):
        def handler(body: dict, jobs: int = 1, fatal_unmet: bool = False) -> RunResult:
            body = dict(body)
            body.setdefault("command", command)
            if body["command"] != command:
                raise HTTPException(422, f"config command {body['command']!r} posted to /{command}")
            try:
                cfg = load_config(body)
            except ConfigError as exc:
                raise HTTPException(422, str(exc))
            return execute(cfg, jobs=jobs, fatal_unmet=fatal_unmet)
        handler.__name__ = f"run_{command}"
        return handler

    for cmd in COMMANDS:
        app.post(f"/{cmd}", response_model=RunResult)(endpoint(cmd))
    return app
