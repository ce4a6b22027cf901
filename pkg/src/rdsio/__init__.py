"""Random dynamical systems with inputs and outputs over seeded noise fibers.

Subpackages map one-to-one onto the verification surface: ``mpds`` (noise
fibers and random variables), ``process`` (stochastic process algebra),
``rdsi`` (flow contract, trajectories, equilibria, characteristics),
``discrete`` (one-step generators), ``linear`` (exact continuous-time
linear flow), ``monotone`` (orders, bracketing, converging-input
experiments), ``compose`` (cascades, feedback, small gain), and ``cli``
(scenario runner).
"""

from . import mpds, process, rdsi, discrete, linear, monotone, compose, exprs, reports

__all__ = [
    "mpds",
    "process",
    "rdsi",
    "discrete",
    "linear",
    "monotone",
    "compose",
    "exprs",
    "reports",
]
__version__ = "0.1.0"
