"""Machine-readable record of a checker run."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np

PILOT_NOTE = ("thresholds for 'finite' and 'scale-stable' ratios are pilot-calibrated "
              "empirical constants, not proven values")

JSON_KEYS = ("check", "anchor", "params", "lhs", "rhs", "ratio", "branch", "seed",
             "quadrature_error")


def ratio_of(lhs: float, rhs: float) -> float:
    """lhs/rhs with 0/x = 0 and x/0 = inf for x > 0."""
    if lhs == 0:
        return 0.0
    if rhs == 0:
        return math.inf
    return lhs / rhs


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (np.floating,)):
        v = float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
    return v


def _unclean(v):
    if isinstance(v, dict):
        return {k: _unclean(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_unclean(x) for x in v]
    if v in ("inf", "-inf", "nan"):
        return float(v)
    return v


@dataclass
class Report:
    check: str
    anchor: str
    lhs: float
    rhs: float
    ratio: float = None
    params: dict = field(default_factory=dict)
    branch: Optional[str] = None
    seed: Optional[int] = None
    quadrature_error: float = 0.0
    status: str = "ok"  # ok | divergent | unbounded | precondition-unmet | not-applicable
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ratio is None:
            self.ratio = ratio_of(self.lhs, self.rhs)

    @property
    def finite(self) -> bool:
        return self.status == "ok" and math.isfinite(self.ratio)

    def to_dict(self, full: bool = True) -> dict:
        d = {k: getattr(self, k) for k in JSON_KEYS}
        if full:
            d["status"] = self.status
            d["extra"] = self.extra
        return _clean(d)

    def to_json(self, full: bool = True) -> str:
        return json.dumps(self.to_dict(full), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        d = _unclean(dict(d))
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "Report":
        return cls.from_dict(json.loads(text))


def signal_report(check: str, anchor: str, status: str, message: str,
                  params: Optional[dict] = None, seed=None, lhs=math.nan, rhs=math.nan) -> Report:
    return Report(check, anchor, lhs, rhs, math.nan, params or {}, None, seed, math.nan,
                  status, {"message": message})


def as_float(v: Any) -> float:
    a = np.asarray(v, dtype=float)
    return float(a) if a.ndim == 0 else float(np.linalg.norm(a))
