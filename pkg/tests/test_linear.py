"""Unit tests for the exact linear flow, its limit integral, and diagnostics."""

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from rdsio import linear
from rdsio.mpds import CellLaw, Fiber, cell_noise, constant_rv, fiber_grid
from rdsio.process import concat, constant, decaying_input, stationary

A_LAW = CellLaw("uniform", lo=(-2.0,), hi=(-0.5,))


@pytest.fixture
def random_coeffs():
    return linear.LinearCoeffs(
        a=cell_noise(A_LAW), b=constant_rv(1.0), decay_rate_hint=1.2
    )


def test_half_life_closed_form():
    coeffs = linear.LinearCoeffs(a=constant_rv(-1.0), b=constant_rv(1.0))
    value = linear.solve(coeffs, math.log(2.0), Fiber(7, 0.25), 0.0,
                         constant([1.0], "continuous"))
    assert value == pytest.approx(0.5, abs=1e-15)


def test_homogeneous_flow_is_product_of_cell_exponentials(random_coeffs):
    for w in fiber_grid(10, seed=10, offset=0.25):
        t = 10.0
        got = linear.solve(random_coeffs, t, w, 0.7, None)
        expected = 0.7 * math.exp(
            linear.integrate_coefficient(random_coeffs.a, w, t)
        )
        assert got == pytest.approx(expected, rel=1e-14)


def _ode_oracle(coeffs, t, w, x0, u_fn, rtol=1e-12):
    """Independent adaptive integration of the same equation, cell by cell."""
    state = x0
    boundaries = [0.0]
    k = math.floor(w.offset) + 1
    while k - w.offset < t:
        boundaries.append(k - w.offset)
        k += 1
    boundaries.append(t)
    for lo, hi in zip(boundaries, boundaries[1:]):
        if hi <= lo:
            continue

        def rhs(s, y):
            ws = w.shift(s)
            return coeffs.a.scalar(ws) * y + coeffs.b.scalar(ws) * u_fn(s, w)

        sol = solve_ivp(rhs, (lo, hi), [state], rtol=rtol, atol=1e-14,
                        method="RK45")
        state = float(sol.y[0, -1])
    return state


def test_solve_matches_adaptive_integrator_on_cell_input(random_coeffs):
    u = stationary(cell_noise(CellLaw("uniform", lo=(-1.0,), hi=(1.0,)), lag=1),
                   "continuous")
    for w in fiber_grid(100, seed=20, offset=0.25):
        exact = linear.solve(random_coeffs, 10.0, w, 0.5, u)
        oracle = _ode_oracle(random_coeffs, 10.0, w, 0.5,
                             lambda s, wf: u.scalar(s, wf), rtol=1e-10)
        assert exact == pytest.approx(oracle, abs=1e-8)


def test_solve_matches_adaptive_integrator_on_smooth_input(random_coeffs):
    limit = cell_noise(CellLaw("uniform", lo=(0.5,), hi=(1.5,)))
    bump = cell_noise(CellLaw("uniform", lo=(0.2,), hi=(0.4,)), lag=1)
    u = decaying_input(limit, bump, rate=1.0)
    for w in fiber_grid(20, seed=30, offset=0.25):
        exact = linear.solve(random_coeffs, 8.0, w, -0.3, u)
        oracle = _ode_oracle(random_coeffs, 8.0, w, -0.3,
                             lambda s, wf: u.scalar(s, wf))
        assert exact == pytest.approx(oracle, abs=1e-8)


def test_splice_consistency_closed_form(random_coeffs):
    rng = np.random.default_rng(40)
    worst = 0.0
    for _ in range(100):
        w = Fiber(int(rng.integers(0, 2**31)), float(rng.uniform(0, 1)))
        s, t = float(rng.uniform(0, 8)), float(rng.uniform(0, 8))
        x = float(rng.uniform(-1, 1))
        u = stationary(cell_noise(A_LAW, lag=2), "continuous")
        v = constant([float(rng.uniform(-1, 1))], "continuous")
        y = linear.solve(random_coeffs, s, w, x, u)
        z = linear.solve(random_coeffs, t, w.shift(s), y, v)
        lhs = linear.solve(random_coeffs, s + t, w, x, concat(u, v, s))
        worst = max(worst, abs(lhs - z) / (1.0 + abs(z)))
    assert worst <= 1e-9


def test_solve_validation(random_coeffs):
    with pytest.raises(ValueError):
        linear.solve(random_coeffs, -1.0, Fiber(0, 0.0), 0.0, None)
    with pytest.raises(ValueError):
        linear.LinearCoeffs(a=constant_rv([1.0, 2.0]), b=constant_rv(1.0))
    with pytest.raises(ValueError):
        linear.LinearCoeffs(a=constant_rv(-1.0), b=constant_rv(1.0),
                            decay_rate_hint=-0.5)


class TestCharacteristic:
    def test_constant_coefficients_geometric_value(self):
        coeffs = linear.LinearCoeffs(a=constant_rv(-1.0), b=constant_rv(1.0))
        for c in (0.5, 2.0):
            got = linear.characteristic(coeffs, constant_rv(c), Fiber(3, 0.25),
                                        tol=1e-10, lam=1.0)
            assert got == pytest.approx(c, abs=1e-9)

    def test_zero_input_is_exactly_zero(self, random_coeffs):
        got = linear.characteristic(random_coeffs, constant_rv(0.0), Fiber(5, 0.25),
                                    tol=1e-9)
        assert got == 0.0

    def test_truncation_tightens_with_tolerance(self, random_coeffs):
        w = Fiber(21, 0.25)
        coarse = linear.characteristic(random_coeffs, constant_rv(1.0), w, tol=1e-6)
        fine = linear.characteristic(random_coeffs, constant_rv(1.0), w, tol=1e-13)
        assert coarse == pytest.approx(fine, abs=2e-6)
        assert coarse != fine

    def test_refuses_nonpositive_rate(self):
        growing = linear.LinearCoeffs(a=constant_rv(0.1), b=constant_rv(1.0))
        with pytest.raises(ValueError, match="decay rate"):
            linear.characteristic(growing, constant_rv(1.0), Fiber(0, 0.0), tol=1e-9)

    def test_tempered_continuity_bound(self, random_coeffs):
        # inputs eps apart map to limits within eps times the kernel mass
        w = Fiber(8, 0.25)
        eps = 1e-3
        k1 = linear.characteristic(random_coeffs, constant_rv(1.0), w, tol=1e-12)
        k2 = linear.characteristic(random_coeffs, constant_rv(1.0 + eps), w, tol=1e-12)
        mass = linear.characteristic(random_coeffs, constant_rv(1.0), w, tol=1e-12)
        assert abs(k2 - k1) <= eps * mass * (1 + 1e-9)


class TestDecayBound:
    def test_constant_drift_at_matching_rate(self):
        coeffs = linear.LinearCoeffs(a=constant_rv(-1.0), b=constant_rv(1.0))
        rep = linear.check_decay_bound(coeffs, rate=1.0,
                                       fibers=fiber_grid(10, seed=50, offset=0.25))
        assert rep.passed
        assert max(rep.gamma) == pytest.approx(1.0, abs=1e-12)
        assert rep.envelope_temperedness.tempered_consistent

    def test_random_cells_at_modest_rate(self, random_coeffs):
        rep = linear.check_decay_bound(random_coeffs, rate=1.2,
                                       fibers=fiber_grid(20, seed=60, offset=0.25))
        assert rep.passed
        assert rep.suggested_rate == pytest.approx(1.25, abs=0.15)

    def test_growing_drift_fails_every_rate(self):
        coeffs = linear.LinearCoeffs(a=constant_rv(0.1), b=constant_rv(1.0))
        for rate in (0.1, 0.5, 1.0):
            rep = linear.check_decay_bound(coeffs, rate=rate,
                                           fibers=fiber_grid(5, seed=70, offset=0.25))
            assert not rep.passed


class TestBoundedFlow:
    def test_constant_coefficients_respect_the_envelope(self):
        coeffs = linear.LinearCoeffs(a=constant_rv(-1.0), b=constant_rv(1.0))
        rep = linear.check_bounded_flow(coeffs, fiber_grid(5, seed=80, offset=0.25),
                                        horizon=8.0, samples=100)
        assert rep.passed
        assert rep.drift_sup == pytest.approx(-1.0)

    def test_zero_data_trajectory_stays_zero(self):
        coeffs = linear.LinearCoeffs(a=constant_rv(-1.0), b=constant_rv(1.0))
        value = linear.solve(coeffs, 5.0, Fiber(0, 0.25), 0.0,
                             constant([0.0], "continuous"))
        assert value == 0.0

    def test_planted_gain_fault_is_caught(self, random_coeffs):
        scaled = linear.LinearCoeffs(a=random_coeffs.a,
                                     b=random_coeffs.b.scale(10.0))

        def cheating_flow(t, w, x, u):
            return linear.solve(scaled, t, w, x, u)

        rep = linear.check_bounded_flow(
            random_coeffs, fiber_grid(5, seed=90, offset=0.25),
            horizon=8.0, samples=200, flow=cheating_flow,
        )
        assert not rep.passed
        assert rep.violations > 0


def test_monotone_kernel_when_gain_nonnegative(random_coeffs):
    # positive kernel: raising the state or the input raises the flow
    rng = np.random.default_rng(100)
    u = stationary(cell_noise(CellLaw("uniform", lo=(0.0,), hi=(1.0,)), lag=3),
                   "continuous")
    for _ in range(200):
        w = Fiber(int(rng.integers(0, 2**31)), float(rng.uniform(0, 1)))
        t = float(rng.uniform(0, 6))
        x = float(rng.uniform(-1, 1))
        dx = float(rng.uniform(0.05, 1.0))
        du = float(rng.uniform(0.05, 1.0))
        lo = linear.solve(random_coeffs, t, w, x, u)
        hi = linear.solve(random_coeffs, t, w, x + dx, u + constant([du], "continuous"))
        assert hi >= lo - 1e-12
