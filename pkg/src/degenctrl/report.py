"""Audit report container shared by the weight, solver, Carleman and control
modules.

An :class:`AuditReport` records the two sides of an inequality together with
the empirical constant, the breakdown into components and enough metadata to
reproduce the computation.  Reports never raise; pass/fail is a field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass
class AuditReport:
    """Left/right sides of an inequality plus sweep metadata.

    ``lhs`` and ``rhs`` may be stored in log space (``log_scale=True``) when
    the underlying weighted integrals are not representable in double
    precision; ``ratio`` is then ``exp(lhs - rhs)`` clipped to the float
    range.
    """

    name: str
    lhs: float
    rhs: float
    passed: bool
    ratio: float = math.nan
    log_scale: bool = False
    components: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @staticmethod
    def from_sides(name, lhs, rhs, *, passed=None, tol=0.0, log_scale=False,
                   components=None, params=None):
        """Build a report, deriving ``ratio`` and (optionally) ``passed``
        from ``lhs <= (1 + tol) * rhs``."""
        if log_scale:
            d = lhs - rhs
            ratio = math.exp(d) if d < 700.0 else math.inf
            ok = lhs <= rhs + math.log1p(tol) if passed is None else passed
        else:
            ratio = lhs / rhs if rhs > 0 else math.nan
            ok = lhs <= (1.0 + tol) * rhs if passed is None else passed
        return AuditReport(name=name, lhs=float(lhs), rhs=float(rhs),
                           passed=bool(ok), ratio=float(ratio),
                           log_scale=log_scale,
                           components=dict(components or {}),
                           params=dict(params or {}))

    def summary(self):
        state = "pass" if self.passed else "FAIL"
        scale = " (log)" if self.log_scale else ""
        return (f"{self.name}: {state}{scale} lhs={self.lhs:.6g} "
                f"rhs={self.rhs:.6g} ratio={self.ratio:.6g}")
