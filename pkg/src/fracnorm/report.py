"""Bound reports and the deterministic JSON/CSV writers."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

SIG_DIGITS = 12


def fmt(x) -> str:
    """Number formatting shared by every report (12 significant digits)."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == 0.0:
        return "0"
    return f"{x:.{SIG_DIGITS}g}"


def _plain(obj):
    """Round floats to the report precision so the JSON text is stable."""
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, int):
        return obj
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return fmt(obj)
        return float(fmt(obj))
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    try:
        import numpy as np

        if isinstance(obj, np.generic):
            return _plain(obj.item())
        if isinstance(obj, np.ndarray):
            return [_plain(v) for v in obj.tolist()]
    except ImportError:  # pragma: no cover
        pass
    return str(obj)


@dataclass(frozen=True)
class BoundReport:
    """One checked inequality ``lhs <= rhs``.

    ``constants`` maps a name to ``{"value": ..., "source": ...}`` where the
    source says whether the number is an explicit formula or a discrete
    estimate.  ``passed`` is ``slack >= -rtol * |rhs|`` with finite inputs.
    """

    bound_id: str
    lhs: float
    rhs: float
    rtol: float
    constants: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def rel_slack(self) -> float:
        scale = max(abs(self.rhs), abs(self.lhs))
        return self.slack / scale if scale > 0 else 0.0

    @property
    def finite(self) -> bool:
        return math.isfinite(self.lhs) and math.isfinite(self.rhs)

    @property
    def passed(self) -> bool:
        return self.finite and self.slack >= -self.rtol * abs(self.rhs)

    def sort_key(self):
        return (self.bound_id, json.dumps(_plain(self.metadata), sort_keys=True))

    def to_dict(self) -> dict:
        return {
            "bound_id": self.bound_id,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "rtol": self.rtol,
            "pass": self.passed,
            "constants": self.constants,
            "metadata": self.metadata,
        }

    def describe(self) -> str:
        meta = ", ".join(f"{k}={v}" for k, v in sorted(self.metadata.items()))
        status = "pass" if self.passed else "FAIL"
        return f"{status} {self.bound_id}: lhs={fmt(self.lhs)} rhs={fmt(self.rhs)} ({meta})"


def make_report(bound_id, lhs, rhs, rtol, constants=None, **metadata) -> BoundReport:
    return BoundReport(
        bound_id, float(lhs), float(rhs), float(rtol), dict(constants or {}), dict(metadata)
    )


def sort_reports(reports):
    return sorted(reports, key=lambda r: r.sort_key())


def reports_to_json(reports) -> str:
    data = [_plain(r.to_dict()) for r in sort_reports(reports)]
    return json.dumps(data, indent=1, sort_keys=True) + "\n"


def summarize(reports) -> list[dict]:
    """Per-bound counts and the smallest relative slack."""
    groups: dict[str, list[BoundReport]] = {}
    for r in reports:
        groups.setdefault(r.bound_id, []).append(r)
    rows = []
    for bid in sorted(groups):
        rs = groups[bid]
        rows.append(
            {
                "bound_id": bid,
                "n_checked": len(rs),
                "n_passed": sum(r.passed for r in rs),
                "min_slack_rel": min(r.rel_slack for r in rs),
            }
        )
    return rows


def write_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row[c]) if isinstance(row[c], (int, float)) else row[c] for c in columns])
    return buf.getvalue()


def summary_csv(reports) -> str:
    return write_csv(summarize(reports), ["bound_id", "n_checked", "n_passed", "min_slack_rel"])


def dumps_json(obj) -> str:
    return json.dumps(_plain(obj), indent=1, sort_keys=True) + "\n"
