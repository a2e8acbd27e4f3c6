"""Structured pass/fail results shared by every checking routine."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass
class VerificationReport:
    """Outcome of a named check.

    ``worst_slack`` is the most negative (or least positive) constraint slack
    seen; a check passes when every slack clears its tolerance.  Composite
    reports keep their components in ``checks``.
    """

    name: str
    passed: bool
    worst_slack: float = float("nan")
    binding: list[float] = field(default_factory=list)
    slack: np.ndarray | None = None
    checks: list["VerificationReport"] = field(default_factory=list)
    message: str = ""
    details: dict[str, Any] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.passed

    def __getitem__(self, name: str) -> "VerificationReport":
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    @classmethod
    def combine(cls, name: str, checks: list["VerificationReport"], **kwargs) -> "VerificationReport":
        slacks = [c.worst_slack for c in checks if np.isfinite(c.worst_slack)]
        return cls(
            name=name,
            passed=all(c.passed for c in checks),
            worst_slack=min(slacks) if slacks else float("nan"),
            checks=list(checks),
            **kwargs,
        )

    def failures(self) -> list["VerificationReport"]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self, verbose: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {
            "name": self.name,
            "passed": bool(self.passed),
            "worst_slack": _json_float(self.worst_slack),
            "binding": [float(b) for b in self.binding],
        }
        if self.message:
            out["message"] = self.message
        if self.details:
            out["details"] = _jsonable(self.details)
        if verbose and self.slack is not None:
            out["slack"] = [float(s) for s in np.asarray(self.slack)]
        if self.checks:
            out["checks"] = [c.to_dict(verbose) for c in self.checks]
        return out

    def to_json(self, verbose: bool = False, **kwargs) -> str:
        return json.dumps(self.to_dict(verbose), **kwargs)

    def summary(self, indent: int = 0) -> str:
        pad = "  " * indent
        status = "PASS" if self.passed else "FAIL"
        line = f"{pad}[{status}] {self.name}"
        if np.isfinite(self.worst_slack):
            line += f"  worst slack {self.worst_slack:.6g}"
        if self.message:
            line += f"  ({self.message})"
        lines = [line]
        for check in self.checks:
            lines.append(check.summary(indent + 1))
        return "\n".join(lines)


def _json_float(x: float) -> float | None:
    x = float(x)
    return x if np.isfinite(x) else None


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _json_float(obj)
    return obj
