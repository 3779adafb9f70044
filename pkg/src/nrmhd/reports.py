"""Report records and their serialized forms (JSON, CSV, plain-text summary)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence


@dataclass
class EstimateReport:
    """One checked inequality ``lhs <= rhs``.

    ``constant`` holds an empirical (ensemble-max or fitted) constant when the
    check involves one; it is a lower bound for the true constant.
    """

    name: str
    lhs: float
    rhs: float
    constant: Optional[float] = None
    rtol: float = 1e-9
    details: dict = field(default_factory=dict)
    atol: float = 0.0
    tag: str = ""

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        if not (math.isfinite(self.lhs) and math.isfinite(self.rhs)):
            return False
        slack = self.rtol * max(abs(self.rhs), abs(self.lhs), 1e-300) + self.atol
        return self.lhs <= self.rhs + slack

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "constant": self.constant,
            "rtol": self.rtol,
            "atol": self.atol,
            "tag": self.tag,
            "passed": self.passed,
            "details": self.details,
        }


def _clean(obj):
    # JSON has no inf/nan; keep them readable as strings
    if isinstance(obj, float):
        if math.isfinite(obj):
            return obj
        return repr(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):
        return _clean(obj.item())
    return obj


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def fmt(x) -> str:
    """Full-precision, platform-stable number formatting for CSV cells."""
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    if hasattr(x, "item"):
        x = x.item()
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path) -> tuple:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    return header, rows


def summary_lines(checks: Sequence[EstimateReport]) -> list:
    lines = []
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        tag = f"[{c.tag}] " if c.tag else ""
        lines.append(f"{status}  {tag}{c.name}  lhs={c.lhs:.6e} rhs={c.rhs:.6e} margin={c.margin:+.3e}")
    return lines
