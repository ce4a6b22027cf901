"""Unit tests for noise fibers, cell laws, and random variables."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from rdsio import mpds
from rdsio.mpds import CellLaw, Fiber, cell_noise, constant_rv, temperedness_report

UNIFORM = CellLaw("uniform", lo=(-2.0,), hi=(-0.5,))


def test_shift_adds_offset():
    w = Fiber(7, 0.25)
    assert mpds.shift(w, 1.5) == Fiber(7, 1.75)


def test_shift_zero_is_identity():
    w = Fiber(3, 0.5)
    assert w.shift(0) is w


@given(
    seed=st.integers(0, 2**32),
    offset=st.integers(-1000, 1000),
    s=st.integers(-500, 500),
    t=st.integers(-500, 500),
)
@settings(max_examples=200)
def test_shift_semigroup_discrete_exact(seed, offset, s, t):
    w = Fiber(seed, offset)
    assert w.shift(s).shift(t) == w.shift(s + t)


@given(
    seed=st.integers(0, 2**32),
    s=st.floats(-50, 50, allow_nan=False),
    t=st.floats(-50, 50, allow_nan=False),
)
@settings(max_examples=200)
def test_shift_semigroup_continuous_one_addition(seed, s, t):
    w = Fiber(seed, 0.25)
    lhs = w.shift(s).shift(t).offset
    rhs = w.shift(s + t).offset
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_sample_deterministic_and_constant_rv():
    w = Fiber(11, 0.0)
    r = cell_noise(UNIFORM)
    first = mpds.sample(r, w)
    second = mpds.sample(r, w)
    np.testing.assert_array_equal(first, second)
    c = constant_rv([3.0, -1.0])
    for off in (0, 5, -17):
        np.testing.assert_array_equal(mpds.sample(c, w.shift(off)), [3.0, -1.0])


def test_unit_noise_scalar_matches_vectorized():
    idx = np.arange(-50, 50)
    scalar = [mpds.unit_noise(123, int(k), channel=2) for k in idx]
    vector = mpds.unit_noise_array(123, idx, channel=2)
    np.testing.assert_array_equal(scalar, vector)


def test_law_sample_paths_agree_bitwise():
    laws = [
        UNIFORM,
        CellLaw("constant", values=(0.5, -1.0)),
        CellLaw("choice", choices=((0.0,), (1.0,), (4.0,))),
    ]
    idx = np.arange(-20, 20)
    for law in laws:
        batch = law.sample_many(99, idx)
        for row, k in zip(batch, idx):
            np.testing.assert_array_equal(law.sample(99, int(k)), row)


def test_semigroup_on_a_thousand_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        w = Fiber(int(rng.integers(0, 2**63)), int(rng.integers(-10**6, 10**6)))
        s, t = int(rng.integers(-10**4, 10**4)), int(rng.integers(-10**4, 10**4))
        assert w.shift(s).shift(t) == w.shift(s + t)


def test_orbit_mean_matches_law_mean():
    # uniform[-2, -0.5] cells: mean -1.25, se = (1.5/sqrt(12))/sqrt(n)
    n = 100_000
    values = UNIFORM.sample_many(7, np.arange(n))[:, 0]
    se = (1.5 / np.sqrt(12.0)) / np.sqrt(n)
    assert abs(values.mean() - (-1.25)) < 3 * se


def test_noise_statistics_are_shift_invariant():
    # two-sample KS between windows far apart along one orbit
    a = UNIFORM.sample_many(42, np.arange(0, 4000))[:, 0]
    b = UNIFORM.sample_many(42, np.arange(250_000, 254_000))[:, 0]
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_choice_law_hits_support_only():
    law = CellLaw("choice", choices=((0.0,), (1.0,), (4.0,)))
    vals = law.sample_many(5, np.arange(2000))[:, 0]
    assert set(np.unique(vals)) <= {0.0, 1.0, 4.0}
    # all three atoms show up
    assert len(np.unique(vals)) == 3


def test_law_validation():
    with pytest.raises(ValueError):
        CellLaw("uniform", lo=(0.0,), hi=())
    with pytest.raises(ValueError):
        CellLaw("uniform", lo=(1.0,), hi=(0.0,))
    with pytest.raises(ValueError):
        CellLaw("nope")
    with pytest.raises(ValueError):
        CellLaw("choice", choices=())


def test_rv_algebra_dimension_checks():
    r = cell_noise(UNIFORM)
    with pytest.raises(ValueError):
        _ = r + constant_rv([1.0, 2.0])
    with pytest.raises(ValueError):
        constant_rv([1.0, 2.0]).scalar(Fiber(0, 0))


def test_rv_sum_and_product_evaluate_pointwise():
    w = Fiber(9, 0.0)
    r1 = cell_noise(UNIFORM)
    r2 = cell_noise(UNIFORM, lag=3)
    np.testing.assert_allclose((r1 + r2)(w), r1(w) + r2(w), rtol=0)
    np.testing.assert_allclose((r1 * r2)(w), r1(w) * r2(w), rtol=0)


class TestTemperedness:
    def test_bounded_variable_is_consistent(self):
        r = cell_noise(UNIFORM)  # bounded by 2
        rep = temperedness_report(r, Fiber(0, 0), gammas=(0.25, 0.5), horizon=40)
        assert rep.tempered_consistent
        assert all(score <= 2.0 for score in rep.gamma_scores.values())

    def test_exponential_growth_flagged(self):
        # synthetic orbit growth exp(|s|), slope 1 > 0.5
        r = mpds.RandomVariable(1, lambda w: np.array([np.exp(abs(w.offset))]))
        rep = temperedness_report(r, Fiber(0, 0), gammas=(0.5,), horizon=30)
        assert not rep.tempered_consistent
        assert rep.growth_slope == pytest.approx(1.0, abs=1e-6)

    def test_product_of_consistent_variables_is_consistent(self):
        r1 = cell_noise(UNIFORM)
        r2 = cell_noise(CellLaw("uniform", lo=(0.5,), hi=(1.5,)), lag=1)
        rep = temperedness_report(r1 * r2, Fiber(3, 0), gammas=(0.25, 0.5, 1.0), horizon=40)
        assert rep.tempered_consistent

    def test_sum_of_consistent_variables_is_consistent(self):
        r1 = cell_noise(UNIFORM)
        r2 = cell_noise(CellLaw("uniform", lo=(0.5,), hi=(1.5,)), lag=2)
        rep = temperedness_report(r1 + r2, Fiber(4, 0), gammas=(0.25, 0.5, 1.0), horizon=40)
        assert rep.tempered_consistent

    def test_rejects_non_finite(self):
        r = mpds.RandomVariable(1, lambda w: np.array([np.inf]))
        with pytest.raises(ValueError, match="non-finite"):
            temperedness_report(r, Fiber(0, 0), gammas=(0.5,), horizon=5)

    def test_parameter_validation(self):
        r = constant_rv([1.0])
        with pytest.raises(ValueError):
            temperedness_report(r, Fiber(0, 0), gammas=(), horizon=5)
        with pytest.raises(ValueError):
            temperedness_report(r, Fiber(0, 0), gammas=(0.5,), horizon=0)
        with pytest.raises(ValueError):
            temperedness_report(r, Fiber(0, 0), gammas=(-0.5,), horizon=5)
