"""Cascade and feedback interconnections, and the small-gain iteration.

A cascade feeds one system's forward output trajectory in as the next
system's input; on product state space this is again a single flow, and
for discrete generator-driven pairs the combined one-step map acts
triangularly.  A feedback loop closes two systems over each other's
outputs; in discrete time the interleaved one-step recursion always
resolves the loop signals, so well-posedness is constructive.  The
small-gain check iterates the composed output characteristic per fiber and
classifies the outcome: geometric convergence to a unique fixed point, or
a period-two pair (gain too large).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .mpds import Fiber, RandomVariable, TemperednessReport, temperedness_report
from .process import Process, Time
from .discrete import Generator, flow_from_generator
from .rdsi import (
    OutputMap,
    SystemFlow,
    forward_traj,
    output_traj,
    pullback_traj,
)

__all__ = [
    "Cascade",
    "FeedbackLoop",
    "LipschitzReport",
    "CascadeCheckReport",
    "SmallGainReport",
    "cascade",
    "verify_cascade_forward",
    "verify_cascade_pullback",
    "check_lipschitz",
    "feedback",
    "loop_signals",
    "verify_feedback",
    "equilibrium_inputs",
    "grid_characteristic_map",
    "small_gain_iterate",
]


@dataclass(frozen=True)
class Cascade:
    """Upstream system + readout feeding a downstream system's input."""

    up: SystemFlow
    up_output: OutputMap
    down: SystemFlow
    combined: SystemFlow

    @property
    def split(self) -> int:
        return self.up.state_dim


def _upstream_output_process(
    up: SystemFlow, h1: OutputMap, x1_vec: np.ndarray, u: Optional[Process]
) -> Process:
    """Forward output trajectory of the upstream system from a state vector."""
    cache: dict[tuple, np.ndarray] = {}

    def fn(s: Time, w: Fiber) -> np.ndarray:
        key = (s, w)
        hit = cache.get(key)
        if hit is None:
            hit = cache[key] = h1(w.shift(s), up(s, w, x1_vec, u))
        return hit

    return Process(h1.dim, up.time_kind, fn, label="upstream_output")


def cascade(up: SystemFlow, up_output: OutputMap, down: SystemFlow) -> Cascade:
    """Interconnect two systems in series on the product state space.

    The combined flow's first block is the upstream flow; the second block
    is the downstream flow driven by the upstream forward output
    trajectory started from the first block of the initial state.  For
    discrete generator-driven pairs the combined flow is built from the
    triangular one-step map, which makes the serial decomposition a
    checkable identity rather than a definition.
    """
    if down.input_dim != up_output.dim:
        raise ValueError(
            f"downstream input dimension {down.input_dim} does not match "
            f"upstream output dimension {up_output.dim}"
        )
    if up.time_kind != down.time_kind:
        raise ValueError("cascaded systems must share a time kind")
    n1, n2 = up.state_dim, down.state_dim

    if up.is_discrete and up.generator is not None and down.generator is not None:
        f1, f2 = up.generator, down.generator

        def g_fn(w: Fiber, z: np.ndarray, value: np.ndarray) -> np.ndarray:
            x1, x2 = z[:n1], z[n1:]
            y1 = up_output(w, x1)
            return np.concatenate([f1(w, x1, value if up.input_dim else None),
                                   f2(w, x2, y1)])

        combined = flow_from_generator(
            Generator(n1 + n2, up.input_dim, g_fn, label="cascade_step"),
            label="cascade",
        )
    else:
        def flow(t, w, z, u):
            x1, x2 = z[:n1], z[n1:]
            drive = _upstream_output_process(up, up_output, x1, u)
            return np.concatenate([up(t, w, x1, u), down(t, w, x2, drive)])

        combined = SystemFlow(
            state_dim=n1 + n2,
            input_dim=up.input_dim,
            time_kind=up.time_kind,
            flow=flow,
            label="cascade",
        )
    return Cascade(up=up, up_output=up_output, down=down, combined=combined)


@dataclass(frozen=True)
class CascadeCheckReport:
    max_residual: float
    samples: int
    tolerance: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "max_residual": self.max_residual,
            "samples": self.samples,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def verify_cascade_forward(
    c: Cascade,
    z: RandomVariable,
    times: Sequence[Time],
    fibers: Sequence[Fiber],
    tolerance: float | None = None,
    u: Optional[Process] = None,
) -> CascadeCheckReport:
    """Serial decomposition of the combined forward flow.

    Compares the combined flow against the pair (upstream flow, downstream
    flow driven by the upstream output trajectory of the random initial
    state), pointwise on the grid.
    """
    if tolerance is None:
        tolerance = 0.0 if c.combined.is_discrete else 1e-9
    n1 = c.split
    x1 = RandomVariable(n1, lambda w: np.asarray(z(w))[:n1])
    x2 = RandomVariable(c.down.state_dim, lambda w: np.asarray(z(w))[n1:])
    eta1 = output_traj(c.up, c.up_output, x1, u)
    up_traj = forward_traj(c.up, x1, u)
    down_traj = forward_traj(c.down, x2, eta1)

    worst = 0.0
    count = 0
    for w in fibers:
        for t in times:
            lhs = c.combined(t, w, z(w), u)
            rhs = np.concatenate([up_traj(t, w), down_traj(t, w)])
            scale = 1.0 + float(np.max(np.abs(rhs)))
            worst = max(worst, float(np.max(np.abs(lhs - rhs))) / scale)
            count += 1
    return CascadeCheckReport(
        max_residual=worst, samples=count, tolerance=tolerance, passed=worst <= tolerance
    )


def verify_cascade_pullback(
    c: Cascade,
    z: RandomVariable,
    times: Sequence[Time],
    fibers: Sequence[Fiber],
    tolerance: float | None = None,
) -> CascadeCheckReport:
    """Downstream block of the combined pullback vs. the driven pullback.

    The projected pullback of the combined system must equal the
    downstream pullback driven by the *unshifted* upstream forward output
    trajectory; exact in discrete time.
    """
    if tolerance is None:
        tolerance = 0.0 if c.combined.is_discrete else 1e-9
    n1 = c.split
    x1 = RandomVariable(n1, lambda w: np.asarray(z(w))[:n1])
    x2 = RandomVariable(c.down.state_dim, lambda w: np.asarray(z(w))[n1:])
    eta1 = output_traj(c.up, c.up_output, x1)
    combined_pb = pullback_traj(c.combined, z)
    down_pb = pullback_traj(c.down, x2, eta1)

    worst = 0.0
    count = 0
    for w in fibers:
        for t in times:
            lhs = combined_pb(t, w)[n1:]
            rhs = down_pb(t, w)
            scale = 1.0 + float(np.max(np.abs(rhs)))
            worst = max(worst, float(np.max(np.abs(lhs - rhs))) / scale)
            count += 1
    return CascadeCheckReport(
        max_residual=worst, samples=count, tolerance=tolerance, passed=worst <= tolerance
    )


@dataclass(frozen=True)
class LipschitzReport:
    violations: int
    worst_excess: float
    samples: int
    constant_temperedness: TemperednessReport
    passed: bool

    def as_dict(self) -> dict:
        return {
            "violations": self.violations,
            "worst_excess": self.worst_excess,
            "samples": self.samples,
            "constant_temperedness": self.constant_temperedness.as_dict(),
            "passed": self.passed,
        }


def check_lipschitz(
    h: OutputMap,
    constant: RandomVariable,
    samples: int = 500,
    seed: int = 0,
    state_dim: int | None = None,
    state_scale: float = 2.0,
    probe: Fiber = Fiber(0, 0),
    temper_horizon: float = 20.0,
) -> LipschitzReport:
    """Sample the random-Lipschitz bound for an output map.

    Checks ``|h(w, x1) - h(w, x2)| <= constant(w) * |x1 - x2|`` on random
    state pairs and fibers, and runs the temperedness diagnostic on the
    constant itself (the bound is only useful when the constant grows
    subexponentially along orbits).
    """
    if state_dim is None:
        raise ValueError("state_dim is required to sample state pairs")
    rng = np.random.default_rng(seed)
    violations = 0
    worst = -math.inf
    for _ in range(samples):
        w = Fiber(int(rng.integers(0, 2**32)), 0)
        x1 = rng.uniform(-state_scale, state_scale, size=state_dim)
        x2 = rng.uniform(-state_scale, state_scale, size=state_dim)
        lhs = float(np.linalg.norm(h(w, x1) - h(w, x2)))
        rhs = constant.scalar(w) * float(np.linalg.norm(x1 - x2))
        excess = lhs - rhs
        worst = max(worst, excess)
        if excess > 1e-12:
            violations += 1
    temper = temperedness_report(
        constant, probe, gammas=(0.25, 0.5, 1.0), horizon=temper_horizon
    )
    return LipschitzReport(
        violations=violations,
        worst_excess=float(worst),
        samples=samples,
        constant_temperedness=temper,
        passed=violations == 0,
    )


# --------------------------------------------------------------------------
# feedback


@dataclass(frozen=True)
class FeedbackLoop:
    """Two systems closed over each other's outputs.

    The closed flow lives on the product state space and advances by the
    interleaved recursion: at each step the loop signals are read off the
    current states through the output maps, then both states advance one
    step under those frozen signals.
    """

    sys1: SystemFlow
    out1: OutputMap
    sys2: SystemFlow
    out2: OutputMap
    closed: SystemFlow

    @property
    def split(self) -> int:
        return self.sys1.state_dim


def feedback(
    sys1: SystemFlow, out1: OutputMap, sys2: SystemFlow, out2: OutputMap
) -> FeedbackLoop:
    """Close two discrete generator-driven systems over each other.

    Requires matching channel dimensions (each system's input space is the
    other's output space).  Discrete loops are always well-posed: the
    one-step construction produces the unique loop signals.
    """
    if not (sys1.is_discrete and sys2.is_discrete):
        raise ValueError("feedback interconnection is built for discrete systems only")
    if sys1.generator is None or sys2.generator is None:
        raise ValueError("feedback needs generator-driven systems")
    if sys1.input_dim != out2.dim:
        raise ValueError("first system's input dimension must match the second's output")
    if sys2.input_dim != out1.dim:
        raise ValueError("second system's input dimension must match the first's output")
    f1, f2 = sys1.generator, sys2.generator
    n1 = sys1.state_dim

    def g_fn(w: Fiber, z: np.ndarray, _value: np.ndarray) -> np.ndarray:
        x1, x2 = z[:n1], z[n1:]
        nu = out1(w, x1)
        mu = out2(w, x2)
        return np.concatenate([f1(w, x1, mu), f2(w, x2, nu)])

    closed = flow_from_generator(
        Generator(n1 + sys2.state_dim, 0, g_fn, label="closed_loop_step"),
        label="closed_loop",
    )
    return FeedbackLoop(sys1=sys1, out1=out1, sys2=sys2, out2=out2, closed=closed)


def loop_signals(loop: FeedbackLoop, z: RandomVariable) -> tuple[Process, Process]:
    """The loop's internal input signals for a random initial state.

    Returns ``(mu, nu)``: ``mu`` drives the first system and is read off
    the second system's state; ``nu`` drives the second and is read off
    the first.
    """
    closed_traj = forward_traj(loop.closed, z)
    n1 = loop.split

    def mu_fn(t: Time, w: Fiber) -> np.ndarray:
        return loop.out2(w.shift(t), closed_traj(t, w)[n1:])

    def nu_fn(t: Time, w: Fiber) -> np.ndarray:
        return loop.out1(w.shift(t), closed_traj(t, w)[:n1])

    mu = Process(loop.out2.dim, "discrete", mu_fn, label="loop_mu")
    nu = Process(loop.out1.dim, "discrete", nu_fn, label="loop_nu")
    return mu, nu


def verify_feedback(
    loop: FeedbackLoop,
    z: RandomVariable,
    times: Sequence[int],
    fibers: Sequence[Fiber],
) -> CascadeCheckReport:
    """Check the loop equations pointwise: each signal equals the readout
    of its system driven by the other signal.  Exact in discrete time."""
    mu, nu = loop_signals(loop, z)
    n1 = loop.split
    x1 = RandomVariable(n1, lambda w: np.asarray(z(w))[:n1])
    x2 = RandomVariable(loop.sys2.state_dim, lambda w: np.asarray(z(w))[n1:])
    traj1 = forward_traj(loop.sys1, x1, mu)
    traj2 = forward_traj(loop.sys2, x2, nu)

    worst = 0.0
    count = 0
    for w in fibers:
        for t in times:
            nu_expected = loop.out1(w.shift(t), traj1(t, w))
            mu_expected = loop.out2(w.shift(t), traj2(t, w))
            worst = max(worst, float(np.max(np.abs(nu(t, w) - nu_expected))))
            worst = max(worst, float(np.max(np.abs(mu(t, w) - mu_expected))))
            count += 1
    return CascadeCheckReport(max_residual=worst, samples=count, tolerance=0.0,
                              passed=worst == 0.0)


def equilibrium_inputs(
    loop: FeedbackLoop, z_eq: RandomVariable
) -> tuple[RandomVariable, RandomVariable]:
    """Stationary loop inputs read off a closed-loop equilibrium state.

    An equilibrium of the closed loop corresponds to a pair of stationary
    inputs, each an output equilibrium of the opposite system; this builds
    that pair (``mu`` from the second block, ``nu`` from the first).
    """
    n1 = loop.split
    mu = RandomVariable(
        loop.out2.dim, lambda w: loop.out2(w, np.asarray(z_eq(w))[n1:]), label="mu_eq"
    )
    nu = RandomVariable(
        loop.out1.dim, lambda w: loop.out1(w, np.asarray(z_eq(w))[:n1]), label="nu_eq"
    )
    return mu, nu


# --------------------------------------------------------------------------
# small gain


def grid_characteristic_map(
    scalar_map: Callable[[Fiber, float], float],
    lo: float,
    hi: float,
    points: int = 101,
) -> Callable[[RandomVariable], RandomVariable]:
    """Lift a per-fiber scalar map to a map on random variables.

    The scalar family is sampled per fiber on a uniform grid over
    ``[lo, hi]`` with linear interpolation in between (exact for affine
    families); outside the grid the boundary slope extends linearly.  The
    lifted map is value-local: the image variable at a fiber depends on
    the argument variable only through its value at that same fiber, which
    is what makes repeated composition affordable.
    """
    if points < 2:
        raise ValueError("need at least two grid points")
    grid = np.linspace(lo, hi, points)
    table_cache: dict[Fiber, np.ndarray] = {}

    def table(w: Fiber) -> np.ndarray:
        hit = table_cache.get(w)
        if hit is None:
            hit = table_cache[w] = np.array([scalar_map(w, float(s)) for s in grid])
        return hit

    def evaluate(w: Fiber, s: float) -> float:
        ys = table(w)
        if s <= grid[0]:
            slope = (ys[1] - ys[0]) / (grid[1] - grid[0])
            return float(ys[0] + slope * (s - grid[0]))
        if s >= grid[-1]:
            slope = (ys[-1] - ys[-2]) / (grid[-1] - grid[-2])
            return float(ys[-1] + slope * (s - grid[-1]))
        return float(np.interp(s, grid, ys))

    def lifted(u: RandomVariable) -> RandomVariable:
        return RandomVariable(1, lambda w: np.array([evaluate(w, u.scalar(w))]))

    return lifted


@dataclass(frozen=True)
class SmallGainReport:
    """Outcome of iterating the composed output characteristic.

    ``sup_distances[k]`` is the largest per-fiber move of iterate ``k``;
    geometric decay of these distances is the small-gain signature.  When
    the iteration stalls on an alternating pair instead, the loop fails
    the small-gain condition and the period-two values are reported.
    """

    iterations: int
    sup_distances: tuple[float, ...]
    rate_estimate: float | None
    converged: bool
    period_two_detected: bool
    fixed_point_values: tuple[float, ...] | None
    period_two_values: tuple[tuple[float, float], ...] | None
    tol: float
    traces: tuple[tuple[int, float, str, int, float], ...]

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "sup_distances": list(self.sup_distances),
            "rate_estimate": self.rate_estimate,
            "converged": self.converged,
            "period_two_detected": self.period_two_detected,
            "fixed_point_values": list(self.fixed_point_values) if self.fixed_point_values else None,
            "tol": self.tol,
        }


def small_gain_iterate(
    charmap: Callable[[RandomVariable], RandomVariable],
    seed_input: RandomVariable,
    max_iters: int,
    tol: float,
    fibers: Sequence[Fiber],
) -> tuple[RandomVariable, SmallGainReport]:
    """Iterate the composed output characteristic to a fixed point.

    Tracks per-fiber values of successive iterates, fits the geometric
    rate of the sup-distances, and stops on convergence (all fibers moved
    less than ``tol``) or on a detected period-two cycle (successive
    iterates alternate while every second iterate is stationary).  Returns
    the final iterate together with the diagnostics.
    """
    if max_iters < 2:
        raise ValueError("need at least two iterations")
    current = seed_input.memoized()
    values = [np.array([current.scalar(w) for w in fibers])]
    sup_distances: list[float] = []
    traces: list[tuple[int, float, str, int, float]] = []
    converged = False
    period_two = False

    for k in range(max_iters):
        current = charmap(current).memoized()
        vals = np.array([current.scalar(w) for w in fibers])
        values.append(vals)
        step = np.abs(vals - values[-2])
        sup = float(np.max(step))
        sup_distances.append(sup)
        for i, w in enumerate(fibers[: min(len(fibers), 20)]):
            traces.append((i, float(k), "iterate_move", 0, float(step[i])))
        if sup <= tol:
            converged = True
            break
        if len(values) >= 3:
            alternation = float(np.max(np.abs(values[-1] - values[-3])))
            if alternation <= tol and sup > tol:
                period_two = True
                break

    rate = None
    positive = [(k, d) for k, d in enumerate(sup_distances) if d > 1e-14]
    if len(positive) >= 3:
        ks = np.array([k for k, _ in positive], dtype=float)
        logs = np.log([d for _, d in positive])
        rate = float(math.exp(np.polyfit(ks, logs, 1)[0]))

    fixed_vals = tuple(float(v) for v in values[-1]) if converged else None
    pair = None
    if period_two:
        pair = tuple(
            (float(a), float(b)) for a, b in zip(values[-2], values[-1])
        )

    report = SmallGainReport(
        iterations=len(sup_distances),
        sup_distances=tuple(sup_distances),
        rate_estimate=rate,
        converged=converged,
        period_two_detected=period_two,
        fixed_point_values=fixed_vals,
        period_two_values=pair,
        tol=float(tol),
        traces=tuple(traces),
    )
    return current, report
