"""Unit tests for the stochastic-process algebra."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdsio import process
from rdsio.mpds import CellLaw, Fiber, cell_noise, fiber_grid
from rdsio.process import concat, constant, initial_value, pullback, shift, stationary

LAW = CellLaw("uniform", lo=(-1.0, 0.0), hi=(1.0, 2.0))


def _grid(time_kind):
    if time_kind == "discrete":
        return list(range(0, 12)), fiber_grid(6, seed=100)
    return [0.0, 0.3, 1.0, 2.5, 7.0], fiber_grid(6, seed=100, offset=0.25)


@pytest.mark.parametrize("time_kind", ["discrete", "continuous"])
def test_shift_by_zero_is_pointwise_identity(time_kind):
    q = stationary(cell_noise(LAW), time_kind)
    times, fibers = _grid(time_kind)
    assert process.max_divergence(shift(q, 0), q, times, fibers) == 0.0


@pytest.mark.parametrize("time_kind", ["discrete", "continuous"])
def test_stationary_is_shift_invariant(time_kind):
    q = stationary(cell_noise(LAW, lag=1), time_kind)
    rng = np.random.default_rng(7)
    for _ in range(1000):
        w = Fiber(int(rng.integers(0, 2**31)),
                  0 if time_kind == "discrete" else float(rng.uniform(0, 1)))
        if time_kind == "discrete":
            s, t = int(rng.integers(0, 20)), int(rng.integers(0, 20))
        else:
            s, t = float(rng.uniform(0, 20)), float(rng.uniform(0, 20))
        np.testing.assert_array_equal(shift(q, s)(t, w), q(t, w))


@given(
    s1=st.integers(0, 15),
    s2=st.integers(0, 15),
    t=st.integers(0, 15),
    seed=st.integers(0, 2**31),
)
@settings(max_examples=100)
def test_shift_composes_additively(s1, s2, t, seed):
    q = concat(constant([1.0]), stationary(cell_noise(LAW).component(0)), 4)
    w = Fiber(seed, 0)
    np.testing.assert_array_equal(
        shift(shift(q, s1), s2)(t, w), shift(q, s1 + s2)(t, w)
    )


def test_concat_case_split():
    u = constant([1.0], "continuous")
    v = constant([2.0], "continuous")
    spliced = concat(u, v, 3.0)
    w = Fiber(0, 0.25)
    assert spliced(2.5, w)[0] == 1.0
    assert spliced(3.5, w)[0] == 2.0
    assert spliced(3.0, w)[0] == 2.0  # boundary belongs to the tail


def test_concat_with_shifted_tail_reproduces_the_original():
    # splicing a process with its own restarted tail changes nothing
    q = stationary(cell_noise(LAW), "discrete")
    for s in (0, 1, 5):
        glued = concat(q, shift(q, s), s)
        times, fibers = _grid("discrete")
        assert process.max_divergence(glued, q, times, fibers) == 0.0


def test_concat_at_zero_is_the_restarted_tail():
    u = stationary(cell_noise(LAW), "discrete")
    v = stationary(cell_noise(LAW, lag=2), "discrete")
    times, fibers = _grid("discrete")
    glued = concat(u, v, 0)
    assert process.max_divergence(glued, v, times, fibers) == 0.0


def test_concat_validation():
    u = constant([1.0])
    with pytest.raises(ValueError, match="arity"):
        concat(u, constant([1.0, 2.0]), 1)
    with pytest.raises(ValueError, match="time-kind"):
        concat(u, constant([1.0], "continuous"), 1)
    with pytest.raises(ValueError):
        concat(u, u, -1)


def test_pullback_of_constant_is_constant():
    q = constant([4.0, -2.0], "continuous")
    times, fibers = _grid("continuous")
    assert process.max_divergence(pullback(q), q, times, fibers) == 0.0


@pytest.mark.parametrize("time_kind", ["discrete", "continuous"])
def test_pullback_of_stationary_is_constant_in_time(time_kind):
    rv = cell_noise(LAW, lag=-1)
    q = stationary(rv, time_kind)
    times, fibers = _grid(time_kind)
    pb = pullback(q)
    for w in fibers:
        base = rv(w)
        for t in times:
            np.testing.assert_array_equal(pb(t, w), base)


def test_pullback_substitution_recovers_forward_values():
    q = concat(stationary(cell_noise(LAW)), constant([0.5, 0.5]), 6)
    pb = pullback(q)
    times, fibers = _grid("discrete")
    for w in fibers:
        for t in times:
            np.testing.assert_array_equal(pb(t, w.shift(t)), q(t, w))


def test_stationary_round_trip_recovers_the_variable():
    rv = cell_noise(LAW, lag=2)
    q = stationary(rv, "discrete")
    recovered = initial_value(q)
    for w in fiber_grid(10, seed=55):
        np.testing.assert_array_equal(recovered(w), rv(w))


def test_stationarity_criterion_both_directions():
    # a process equals the stationary process of its time-zero freeze
    # exactly when the observer shift fixes it
    times, fibers = _grid("discrete")
    q = stationary(cell_noise(LAW), "discrete")
    rebuilt = stationary(initial_value(q), "discrete")
    assert process.max_divergence(q, rebuilt, times, fibers) == 0.0

    moving = concat(constant([0.0, 0.0]), stationary(cell_noise(LAW)), 3)
    shifted = shift(moving, 3)
    assert process.max_divergence(moving, shifted, times, fibers) > 0.0


def test_decaying_input_pullback_limit():
    limit = cell_noise(CellLaw("uniform", lo=(0.5,), hi=(1.5,)))
    disturbance = cell_noise(CellLaw("uniform", lo=(0.2,), hi=(0.4,)), lag=1)
    u = process.decaying_input(limit, disturbance, rate=1.0)
    w = Fiber(12, 0.25)
    for t in (0.0, 1.0, 5.0, 20.0):
        expected = limit(w) + np.exp(-t) * disturbance(w)
        np.testing.assert_allclose(u(t, w.shift(-t)), expected, rtol=0, atol=1e-15)


def test_negative_time_rejected():
    q = constant([1.0])
    with pytest.raises(ValueError):
        q(-1, Fiber(0, 0))
    with pytest.raises(ValueError):
        shift(q, -2)
