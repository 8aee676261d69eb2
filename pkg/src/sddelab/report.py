"""Machine-readable verdicts and deterministic CSV/JSON writers."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np


def _clean(obj):
    """Convert numpy scalars/arrays into plain JSON-compatible values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


@dataclass
class BoundReport:
    """Outcome of one checked inequality.

    ``margins`` are signed slacks, one per test point; the check fails iff
    some margin is below ``-tolerance``.
    """

    name: str
    constants: dict
    points: list
    margins: list
    tolerance: float = 0.0
    extra: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    data: dict = field(default_factory=dict, repr=False)  # arrays, not serialised

    @property
    def passed(self):
        m = np.asarray(self.margins, dtype=float)
        if m.size == 0:
            return False
        return bool(np.all(m >= -self.tolerance))

    @property
    def worst_margin(self):
        m = np.asarray(self.margins, dtype=float)
        return float(m.min()) if m.size else float("nan")

    @property
    def violations(self):
        return int(np.sum(np.asarray(self.margins, dtype=float) < -self.tolerance))

    def summary(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict} {self.name}: {len(self.margins)} points, "
                f"{self.violations} violations, worst margin {self.worst_margin:.6g}")

    def to_dict(self):
        return _clean({
            "name": self.name,
            "passed": self.passed,
            "violations": self.violations,
            "worst_margin": self.worst_margin,
            "tolerance": self.tolerance,
            "constants": self.constants,
            "n_points": len(self.margins),
            "extra": self.extra,
            "notes": self.notes,
        })


def combine(name, reports, extra=None):
    """Merge several reports into one whose margins are the concatenation."""
    margins, points = [], []
    for r in reports:
        # rescale each child's tolerance into its margins so one threshold works
        margins.extend((np.asarray(r.margins, dtype=float) + r.tolerance).tolist())
        points.extend(r.points)
    return BoundReport(
        name=name,
        constants={r.name: r.constants for r in reports},
        points=points,
        margins=margins,
        extra={"parts": {r.name: r.passed for r in reports}, **(extra or {})},
    )


def dumps_json(obj):
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps_json(obj))


def fmt(v):
    """17-significant-digit rendering used for every CSV number."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
