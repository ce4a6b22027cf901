"""Small expression trees for declaring one-step maps in scenario files.

A generator is data: one expression per state component over the symbols
``state``, ``input``, ``noise`` plus constants, closed under addition,
multiplication, scaling, clamping, and tabulated piecewise-linear
nonlinearities.  Expressions are plain nested mappings so scenarios stay
declarative and serializable.
"""

from __future__ import annotations

from typing import Any, Mapping

import numpy as np

from .mpds import CellLaw, Fiber
from .discrete import Generator

__all__ = ["ExprError", "law_from_spec", "compile_expr", "compile_generator"]


class ExprError(ValueError):
    """Malformed expression or law specification; carries the config path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _require(spec: Mapping, key: str, path: str) -> Any:
    if key not in spec:
        raise ExprError(path, f"missing required field {key!r}")
    return spec[key]


def law_from_spec(spec: Mapping, path: str = "law") -> CellLaw:
    """Build a cell law from its mapping form.

    Forms: ``{law: constant, values: [..]}``, ``{law: uniform, lo: [..],
    hi: [..]}``, ``{law: choice, choices: [[..], ..]}``.  Scalars are
    accepted where one-element lists are meant.
    """
    if not isinstance(spec, Mapping):
        raise ExprError(path, f"expected a mapping, got {type(spec).__name__}")
    kind = _require(spec, "law", path)

    def vec(key: str) -> tuple[float, ...]:
        raw = _require(spec, key, path)
        if isinstance(raw, (int, float)):
            raw = [raw]
        try:
            return tuple(float(v) for v in raw)
        except (TypeError, ValueError) as exc:
            raise ExprError(f"{path}.{key}", f"expected numbers, got {raw!r}") from exc

    try:
        if kind == "constant":
            return CellLaw("constant", values=vec("values"))
        if kind == "uniform":
            return CellLaw("uniform", lo=vec("lo"), hi=vec("hi"))
        if kind == "choice":
            raw = _require(spec, "choices", path)
            choices = tuple(
                tuple(float(v) for v in (row if isinstance(row, (list, tuple)) else [row]))
                for row in raw
            )
            return CellLaw("choice", choices=choices)
    except ValueError as exc:
        raise ExprError(path, str(exc)) from exc
    raise ExprError(path, f"unknown law kind {kind!r}")


def compile_expr(spec: Any, path: str = "expr"):
    """Compile one expression node to ``fn(state, input, noise) -> float``."""
    if isinstance(spec, (int, float)):
        value = float(spec)
        return lambda x, u, n: value
    if not isinstance(spec, Mapping):
        raise ExprError(path, f"expected a mapping or number, got {type(spec).__name__}")
    op = _require(spec, "op", path)

    if op == "const":
        value = float(_require(spec, "value", path))
        return lambda x, u, n: value
    if op in ("state", "input", "noise"):
        index = int(spec.get("index", 0))
        if op == "state":
            return lambda x, u, n: x[index]
        if op == "input":
            return lambda x, u, n: u[index]
        return lambda x, u, n: n[index]
    if op in ("add", "mul"):
        args = _require(spec, "args", path)
        if not isinstance(args, (list, tuple)) or not args:
            raise ExprError(f"{path}.args", "expected a nonempty list")
        parts = [compile_expr(a, f"{path}.args[{i}]") for i, a in enumerate(args)]
        if op == "add":
            return lambda x, u, n: sum(p(x, u, n) for p in parts)
        def mul(x, u, n):
            out = 1.0
            for p in parts:
                out *= p(x, u, n)
            return out
        return mul
    if op == "scale":
        factor = float(_require(spec, "factor", path))
        inner = compile_expr(_require(spec, "arg", path), f"{path}.arg")
        return lambda x, u, n: factor * inner(x, u, n)
    if op == "clamp":
        lo = float(_require(spec, "lo", path))
        hi = float(_require(spec, "hi", path))
        if lo > hi:
            raise ExprError(path, f"clamp needs lo <= hi, got {lo} > {hi}")
        inner = compile_expr(_require(spec, "arg", path), f"{path}.arg")
        return lambda x, u, n: min(max(inner(x, u, n), lo), hi)
    if op == "table":
        xs = [float(v) for v in _require(spec, "xs", path)]
        ys = [float(v) for v in _require(spec, "ys", path)]
        if len(xs) != len(ys) or len(xs) < 2:
            raise ExprError(path, "table needs xs and ys of equal length >= 2")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ExprError(path, "table xs must be strictly increasing")
        inner = compile_expr(_require(spec, "arg", path), f"{path}.arg")
        xs_arr, ys_arr = np.asarray(xs), np.asarray(ys)
        return lambda x, u, n: float(np.interp(inner(x, u, n), xs_arr, ys_arr))
    raise ExprError(path, f"unknown op {op!r}")


def compile_generator(spec: Mapping, path: str = "generator") -> Generator:
    """Compile a generator declaration into a one-step map.

    Expected fields: ``state_dim``, ``input_dim``, optional ``noise`` (a
    cell-law spec read once per step at the advancing cell), and
    ``components`` with one expression per state coordinate.
    """
    if not isinstance(spec, Mapping):
        raise ExprError(path, f"expected a mapping, got {type(spec).__name__}")
    state_dim = int(_require(spec, "state_dim", path))
    input_dim = int(spec.get("input_dim", 0))
    components = _require(spec, "components", path)
    if not isinstance(components, (list, tuple)) or len(components) != state_dim:
        raise ExprError(
            f"{path}.components",
            f"expected {state_dim} component expressions, got "
            f"{len(components) if isinstance(components, (list, tuple)) else type(components).__name__}",
        )
    law = law_from_spec(spec["noise"], f"{path}.noise") if spec.get("noise") else None
    fns = [
        compile_expr(comp, f"{path}.components[{i}]")
        for i, comp in enumerate(components)
    ]

    def step(w: Fiber, x: np.ndarray, u_value: np.ndarray) -> np.ndarray:
        noise = law.sample(w.seed, w.cell(0)) if law is not None else np.zeros(0)
        return np.array([fn(x, u_value, noise) for fn in fns])

    return Generator(state_dim, input_dim, step, label=str(spec.get("label", "scenario")))
