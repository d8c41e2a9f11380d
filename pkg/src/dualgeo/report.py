"""Check reports shared by every certification routine."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .jets import Point


@dataclass
class CheckReport:
    name: str
    passed: bool
    max_residual: float
    worst_point: Point | None
    samples_used: int
    notes: str = ""
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "pass": bool(self.passed),
            "max_residual": float(self.max_residual),
            "worst_point": None if self.worst_point is None else self.worst_point.as_dict(),
            "samples_used": int(self.samples_used),
            "notes": self.notes,
        }


class ResidualTracker:
    """Running maxima of named residual families over sample points."""

    def __init__(self, families: list[str]):
        self.families = list(families)
        self.max = {f: 0.0 for f in families}
        self.worst: Point | None = None
        self.worst_value = -1.0
        self.used = 0
        self.failures: list[str] = []

    def update(self, family: str, residual, pt: Point) -> None:
        r = float(np.max(np.abs(residual))) if np.size(residual) else 0.0
        if not np.isfinite(r):
            r = float("inf")
        if r > self.max[family]:
            self.max[family] = r
        if r > self.worst_value:
            self.worst_value = r
            self.worst = pt

    def point_done(self) -> None:
        self.used += 1

    def point_failed(self, pt: Point, err: Exception) -> None:
        self.failures.append(f"x={list(np.round(pt.x, 6))} p={list(np.round(pt.p, 6))}: {err}")

    @property
    def overall(self) -> float:
        return max(self.max.values()) if self.max else 0.0

    def report(self, name: str, tol: float, extra_notes: str = "") -> CheckReport:
        parts = [f"{k}={_fmt(v)}" for k, v in self.max.items()]
        if self.failures:
            parts.append(f"{len(self.failures)} point(s) failed: " + self.failures[0])
        if extra_notes:
            parts.append(extra_notes)
        passed = self.used > 0 and self.overall < tol
        if self.used == 0:
            parts.append("no sample point could be evaluated")
        return CheckReport(
            name=name,
            passed=passed,
            max_residual=self.overall,
            worst_point=self.worst,
            samples_used=self.used,
            notes="; ".join(parts),
            details=dict(self.max),
        )


def _fmt(v: float) -> str:
    return f"{v:.3e}"
