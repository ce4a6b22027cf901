"""Stochastic processes over noise fibers and their operator algebra.

A process maps ``(t, fiber)`` to a vector and is closed under three
operations: the observer shift (restart the clock at a later time on the
correspondingly rewound fiber), concatenation (switch from one input to
another at a splice time), and pullback (start further and further in the
past and observe at the fiber itself).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .mpds import Fiber, RandomVariable

__all__ = [
    "TIME_KINDS",
    "Process",
    "StationaryProcess",
    "constant",
    "stationary",
    "shift",
    "concat",
    "pullback",
    "initial_value",
    "decaying_input",
    "max_divergence",
]

TIME_KINDS = ("discrete", "continuous")

Time = float | int
BreakpointFn = Callable[[Fiber, float, float], tuple[float, ...]]


def _check_time_kind(kind: str) -> str:
    if kind not in TIME_KINDS:
        raise ValueError(f"time kind must be one of {TIME_KINDS}, got {kind!r}")
    return kind


@dataclass(frozen=True)
class Process:
    """Pure map ``(t, fiber) -> R^dim`` for nonnegative ``t``.

    ``piecewise_constant`` marks processes that are constant on the unit
    noise cells of the evaluation fiber (true for everything assembled from
    cell reads); exact integrators rely on it.  ``extra_breakpoints`` lists
    discontinuities that do not sit on the cell grid, e.g. splice times
    introduced by concatenation.
    """

    dim: int
    time_kind: str
    fn: Callable[[Time, Fiber], np.ndarray]
    piecewise_constant: bool = False
    extra_breakpoints: Optional[BreakpointFn] = None
    label: str = ""

    def __post_init__(self):
        _check_time_kind(self.time_kind)

    def __call__(self, t: Time, fiber: Fiber) -> np.ndarray:
        if t < 0:
            raise ValueError("processes are defined for t >= 0")
        return np.atleast_1d(np.asarray(self.fn(t, fiber), dtype=float))

    def scalar(self, t: Time, fiber: Fiber) -> float:
        if self.dim != 1:
            raise ValueError(f"scalar() on a {self.dim}-dimensional process")
        return float(self(t, fiber)[0])

    def breakpoints(self, fiber: Fiber, lo: float, hi: float) -> tuple[float, ...]:
        """Off-grid discontinuity times in the open interval (lo, hi)."""
        if self.extra_breakpoints is None:
            return ()
        return tuple(b for b in self.extra_breakpoints(fiber, lo, hi) if lo < b < hi)

    def shift(self, s: Time) -> "Process":
        """The process as seen by an observer who started at time ``s``.

        The shifted process at ``(t, fiber)`` equals the original at
        ``(t + s)`` on the fiber rewound by ``s``.
        """
        if s < 0:
            raise ValueError("shift requires s >= 0")
        if s == 0:
            return self

        def fn(t: Time, w: Fiber) -> np.ndarray:
            return self.fn(t + s, w.shift(-s))

        def brk(w: Fiber, lo: float, hi: float) -> tuple[float, ...]:
            return tuple(b - s for b in self.breakpoints(w.shift(-s), lo + s, hi + s))

        return Process(
            self.dim, self.time_kind, fn,
            piecewise_constant=self.piecewise_constant,
            extra_breakpoints=brk if self.extra_breakpoints else None,
            label=f"shift({self.label},{s})",
        )

    def concat(self, other: "Process", s: Time) -> "Process":
        """Follow this process on ``[0, s)``, then hand over to ``other``.

        Past the splice the value is ``other`` restarted at the advanced
        fiber: ``(u concat v at s)(tau) = v(tau - s, fiber shifted by s)``.
        """
        if s < 0:
            raise ValueError("concatenation requires s >= 0")
        if self.dim != other.dim:
            raise ValueError("arity mismatch in concatenation")
        if self.time_kind != other.time_kind:
            raise ValueError("time-kind mismatch in concatenation")

        def fn(tau: Time, w: Fiber) -> np.ndarray:
            if tau < s:
                return self.fn(tau, w)
            return other.fn(tau - s, w.shift(s))

        def brk(w: Fiber, lo: float, hi: float) -> tuple[float, ...]:
            pts = [float(s)]
            pts.extend(self.breakpoints(w, lo, min(hi, float(s))))
            pts.extend(b + s for b in other.breakpoints(w.shift(s), 0.0, hi - s))
            return tuple(pts)

        return Process(
            self.dim, self.time_kind, fn,
            piecewise_constant=self.piecewise_constant and other.piecewise_constant,
            extra_breakpoints=brk,
            label=f"concat({self.label},{other.label},{s})",
        )

    def pullback(self) -> "Process":
        """Evaluate at time ``t`` on the fiber rewound by ``t``."""

        def fn(t: Time, w: Fiber) -> np.ndarray:
            return self.fn(t, w.shift(-t))

        return Process(self.dim, self.time_kind, fn, label=f"pullback({self.label})")

    def __add__(self, other: "Process") -> "Process":
        if self.dim != other.dim or self.time_kind != other.time_kind:
            raise ValueError("mismatched processes in sum")
        pc = self.piecewise_constant and other.piecewise_constant

        def brk(w: Fiber, lo: float, hi: float) -> tuple[float, ...]:
            return self.breakpoints(w, lo, hi) + other.breakpoints(w, lo, hi)

        has_brk = self.extra_breakpoints is not None or other.extra_breakpoints is not None
        return Process(
            self.dim, self.time_kind,
            lambda t, w: self.fn(t, w) + other.fn(t, w),
            piecewise_constant=pc,
            extra_breakpoints=brk if has_brk else None,
        )

    def scale(self, factor: float) -> "Process":
        return Process(
            self.dim, self.time_kind,
            lambda t, w: factor * np.asarray(self.fn(t, w), dtype=float),
            piecewise_constant=self.piecewise_constant,
            extra_breakpoints=self.extra_breakpoints,
        )


@dataclass(frozen=True)
class StationaryProcess(Process):
    """Process of the form ``(t, fiber) -> base(fiber shifted by t)``.

    Invariant under the observer shift for every restart time; the base
    variable is recovered by evaluating at ``t = 0``.
    """

    base: RandomVariable | None = None


def constant(values, time_kind: str = "discrete") -> Process:
    """The trivial process: the same vector at every time and fiber."""
    vec = np.atleast_1d(np.asarray(values, dtype=float))
    return Process(
        vec.size, _check_time_kind(time_kind),
        lambda t, w: vec.copy(),
        piecewise_constant=True,
        label=f"const({vec.tolist()})",
    )


def stationary(
    rv: RandomVariable, time_kind: str = "discrete", cell_resolved: bool = True
) -> StationaryProcess:
    """Stationary process generated by a random variable.

    ``cell_resolved`` marks variables whose orbit values change only at
    unit-cell boundaries (anything assembled from cell reads); variables
    that vary continuously along orbits, such as limit states of other
    systems, must pass ``False`` so integrators do not treat them as
    constants per cell.
    """
    return StationaryProcess(
        rv.dim, _check_time_kind(time_kind),
        lambda t, w: np.atleast_1d(np.asarray(rv(w.shift(t)), dtype=float)),
        piecewise_constant=cell_resolved,
        label=f"stationary({rv.label})",
        base=rv,
    )


def shift(q: Process, s: Time) -> Process:
    return q.shift(s)


def concat(u: Process, v: Process, s: Time) -> Process:
    return u.concat(v, s)


def pullback(q: Process) -> Process:
    return q.pullback()


def initial_value(q: Process) -> RandomVariable:
    """The random variable obtained by freezing the process at time zero."""
    return RandomVariable(q.dim, lambda w: q(0, w), label=f"{q.label}@0")


def decaying_input(
    limit: RandomVariable,
    disturbance: RandomVariable,
    rate: float = 1.0,
    time_kind: str = "continuous",
) -> Process:
    """Input whose pullback converges: stationary limit plus a decaying term.

    At ``(t, fiber)`` the value is ``limit`` at the advanced fiber plus
    ``exp(-rate*t)`` times ``disturbance`` at the advanced fiber, so the
    pullback at time ``t`` equals ``limit(fiber) + exp(-rate*t) *
    disturbance(fiber)``.
    """
    if limit.dim != disturbance.dim:
        raise ValueError("limit and disturbance must have equal dimension")

    def fn(t: Time, w: Fiber) -> np.ndarray:
        wt = w.shift(t)
        return np.asarray(limit(wt), dtype=float) + np.exp(-rate * t) * np.asarray(
            disturbance(wt), dtype=float
        )

    return Process(limit.dim, _check_time_kind(time_kind), fn,
                   piecewise_constant=False, label="decaying_input")


def max_divergence(
    p: Process,
    q: Process,
    times: Sequence[Time],
    fibers: Sequence[Fiber],
) -> float:
    """Largest pointwise gap between two processes on a sampling grid."""
    if p.dim != q.dim:
        raise ValueError("arity mismatch")
    worst = 0.0
    for t in times:
        for w in fibers:
            gap = float(np.max(np.abs(p(t, w) - q(t, w))))
            if gap > worst:
                worst = gap
    return worst
