"""Unit tests for scenario expression trees and law specs."""

import numpy as np
import pytest

from rdsio.exprs import ExprError, compile_expr, compile_generator, law_from_spec
from rdsio.mpds import Fiber


def test_law_forms():
    const = law_from_spec({"law": "constant", "values": [1.0, 2.0]})
    np.testing.assert_array_equal(const.sample(0, 5), [1.0, 2.0])
    uni = law_from_spec({"law": "uniform", "lo": -1.0, "hi": 1.0})
    assert uni.dim == 1
    v = uni.sample(3, 7)
    assert -1.0 <= v[0] <= 1.0
    choice = law_from_spec({"law": "choice", "choices": [[0.0], [2.0]]})
    assert choice.sample(1, 1)[0] in (0.0, 2.0)


def test_law_errors_carry_paths():
    with pytest.raises(ExprError, match="sys.a: unknown law"):
        law_from_spec({"law": "gaussian"}, path="sys.a")
    with pytest.raises(ExprError, match="missing required field"):
        law_from_spec({"law": "uniform", "lo": [0.0]}, path="sys.a")
    with pytest.raises(ExprError, match="expected numbers"):
        law_from_spec({"law": "constant", "values": ["x"]}, path="sys.a")


def test_expr_affine_clamp_table():
    expr = {
        "op": "add",
        "args": [
            {"op": "scale", "factor": 0.5, "arg": {"op": "state", "index": 0}},
            {"op": "clamp", "lo": -1.0, "hi": 1.0, "arg": {"op": "input", "index": 0}},
            {"op": "mul", "args": [{"op": "noise", "index": 0}, 2.0]},
        ],
    }
    fn = compile_expr(expr)
    x, u, n = np.array([4.0]), np.array([3.0]), np.array([0.25])
    assert fn(x, u, n) == pytest.approx(2.0 + 1.0 + 0.5)

    table = compile_expr({"op": "table", "xs": [0.0, 1.0, 2.0], "ys": [0.0, 1.0, 0.0],
                          "arg": {"op": "state", "index": 0}})
    assert table(np.array([0.5]), u, n) == pytest.approx(0.5)
    assert table(np.array([1.5]), u, n) == pytest.approx(0.5)


def test_expr_errors_carry_paths():
    with pytest.raises(ExprError, match=r"gen.components\[0\].args\[1\]: unknown op"):
        compile_expr({"op": "add", "args": [1.0, {"op": "frobnicate"}]},
                     path="gen.components[0]")
    with pytest.raises(ExprError, match="strictly increasing"):
        compile_expr({"op": "table", "xs": [0.0, 0.0], "ys": [1.0, 2.0],
                      "arg": {"op": "state"}})
    with pytest.raises(ExprError, match="clamp needs lo <= hi"):
        compile_expr({"op": "clamp", "lo": 2.0, "hi": 1.0, "arg": 0.0})
    with pytest.raises(ExprError, match="nonempty list"):
        compile_expr({"op": "add", "args": []})


def test_compile_generator_steps_with_noise():
    gen = compile_generator({
        "state_dim": 1,
        "input_dim": 1,
        "noise": {"law": "constant", "values": [0.125]},
        "components": [
            {"op": "add", "args": [
                {"op": "scale", "factor": 0.5, "arg": {"op": "state", "index": 0}},
                {"op": "input", "index": 0},
                {"op": "noise", "index": 0},
            ]}
        ],
    })
    out = gen(Fiber(0, 0), [2.0], [0.25])
    assert out[0] == pytest.approx(1.0 + 0.25 + 0.125)


def test_compile_generator_component_count_checked():
    with pytest.raises(ExprError, match="component"):
        compile_generator({"state_dim": 2, "components": [0.0]})
