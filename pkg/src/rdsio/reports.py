"""Deterministic report and trace serialization.

Trace CSV format (versioned in the leading comment line): one row per
``(fiber_id, t, series, component, value)``, sorted so identical runs
produce byte-identical files.  Reports are JSON objects with sorted keys;
floats serialize via shortest round-trip repr, which is stable across
runs and platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "TRACE_FORMAT_VERSION",
    "Assertion",
    "RunReport",
    "write_trace_csv",
    "write_json_report",
    "fit_log_slope",
]

TRACE_FORMAT_VERSION = 1

TraceRow = tuple[int, float, str, int, float]


@dataclass(frozen=True)
class Assertion:
    """One named pass/fail check plus the number it was judged on."""

    name: str
    passed: bool
    value: float | None = None
    bound: float | None = None
    detail: str = ""

    def as_dict(self) -> dict:
        out: dict = {"name": self.name, "passed": self.passed}
        if self.value is not None:
            out["value"] = float(self.value)
        if self.bound is not None:
            out["bound"] = float(self.bound)
        if self.detail:
            out["detail"] = self.detail
        return out


@dataclass
class RunReport:
    """Everything one scenario run produced."""

    scenario: str
    experiment: str
    seed: int
    fibers: int
    assertions: list[Assertion] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    traces: list[TraceRow] = field(default_factory=list)

    def check(self, name: str, passed: bool, value=None, bound=None, detail: str = "") -> bool:
        self.assertions.append(Assertion(name, bool(passed), value, bound, detail))
        return bool(passed)

    def extend_traces(self, rows: Iterable[TraceRow]) -> None:
        self.traces.extend(rows)

    @property
    def all_passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "experiment": self.experiment,
            "seed": self.seed,
            "fibers": self.fibers,
            "passed": self.all_passed,
            "assertions": [a.as_dict() for a in self.assertions],
            "metrics": self.metrics,
        }


def _format_value(v: float) -> str:
    # repr gives the shortest decimal that round-trips; bit-stable output.
    return repr(float(v))


def write_trace_csv(path: Path | str, rows: Sequence[TraceRow]) -> None:
    """Write trace rows sorted by (fiber_id, t, series, component)."""
    ordered = sorted(rows, key=lambda r: (r[0], r[1], r[2], r[3]))
    lines = [f"# rdsio-trace v{TRACE_FORMAT_VERSION}", "fiber_id,t,series,component,value"]
    for fiber_id, t, series, component, value in ordered:
        if "," in series or "\n" in series:
            raise ValueError(f"series name {series!r} is not CSV-safe")
        lines.append(
            f"{int(fiber_id)},{_format_value(t)},{series},{int(component)},{_format_value(value)}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def write_json_report(path: Path | str, report: RunReport) -> None:
    payload = json.dumps(_jsonable(report.as_dict()), indent=2, sort_keys=True)
    Path(path).write_text(payload + "\n", encoding="utf-8")


def fit_log_slope(
    times: Sequence[float],
    values: Sequence[float],
    floor: float = 1e-14,
) -> float | None:
    """Least-squares slope of ``log(values)`` against ``times``.

    Points at or below ``floor`` are dropped (they sit in float noise and
    would flatten the fit); returns None when fewer than two usable points
    remain.
    """
    ts, logs = [], []
    for t, v in zip(times, values):
        if v > floor:
            ts.append(float(t))
            logs.append(float(np.log(v)))
    if len(ts) < 2:
        return None
    return float(np.polyfit(ts, logs, 1)[0])
