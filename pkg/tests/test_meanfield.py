import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jsqclt.linear_ops import build_operator_K
from jsqclt.meanfield import (
    StepRejected,
    correction_A,
    correction_A_exact,
    drift,
    finite_n_drift,
    fit_decay_rate,
    fixed_point,
    integrate_ode,
    remainder_B,
    remainder_H,
    tail_exponent,
)
from jsqclt.model import DomainError, ModelParams, make_geometric_weights, validate_tail

P = ModelParams(0.5, 1.0, 2)


def random_tail(rng, kmax):
    return np.sort(rng.uniform(0, 1, kmax))[::-1]


# --- drift -----------------------------------------------------------------

def test_drift_examples():
    d = drift([0.5, 0.0], P)
    assert d.f_plus[0] == pytest.approx(0.375)
    assert d.f_minus[0] == pytest.approx(0.5)
    assert d.f[0] == pytest.approx(-0.125)
    d = drift([0.5, 0.25, 0.0], P)
    assert d.f_plus[1] == pytest.approx(0.09375)
    assert d.f_minus[1] == pytest.approx(0.25)


@pytest.mark.parametrize("L", [1, 2, 3, 4])
@pytest.mark.parametrize("rho", [0.3, 0.5, 0.7, 0.9])
def test_fixed_point_is_a_zero_of_the_drift(L, rho):
    p = ModelParams(rho, 1.0, L)
    u = fixed_point(p, 40 if L == 1 else 12)
    d = drift(u, p)
    # truncation drops the last coordinate's upward flux only
    assert np.max(np.abs(d.f[:-1])) <= 1e-12
    np.testing.assert_array_equal(d.f, d.f_plus - d.f_minus)
    assert np.all(d.f_plus >= 0) and np.all(d.f_minus >= 0)


def test_drift_triple_signs_on_random_tails():
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = random_tail(rng, 8)
        d = drift(v, ModelParams(0.7, 1.0, 3))
        assert np.all(d.f_plus >= 0) and np.all(d.f_minus >= 0)


# --- combinatorial corrections ---------------------------------------------

def test_correction_A_examples():
    assert correction_A(0.0, 10, P) == 0
    assert correction_A(1.0, 10, P) == pytest.approx(0.0, abs=1e-15)
    # brute-force falling factorial: (3)(2)/(10)(9) - 0.09
    assert correction_A(0.3, 10, P) == pytest.approx(6 / 90 - 0.09, rel=1e-12)
    vals = [correction_A(k / 10, 10, P) for k in range(11)]
    assert all(v <= 1e-15 for v in vals)


def test_correction_A_rejects_small_N():
    with pytest.raises(DomainError):
        correction_A(0.5, 1, P)


def test_correction_A_zero_for_L1():
    p = ModelParams(0.5, 1.0, 1)
    assert np.all(correction_A(np.linspace(0, 1, 11), 7, p) == 0)


@pytest.mark.parametrize("L", [1, 2, 3, 4])
def test_correction_A_exact_nonpositive_on_lattice(L):
    for N in range(L, 21):
        for k in range(N + 1):
            assert correction_A_exact(k, N, L) <= 0


@pytest.mark.parametrize("L", [2, 3, 4])
def test_correction_A_order_one_over_N(L):
    p = ModelParams(0.5, 1.0, L)
    a = np.linspace(1e-3, 1, 400)
    # sup over a of N |A^N(a)| / a stays bounded as N grows
    consts = [np.max(N * np.abs(correction_A(a, N, p)) / a) for N in (10, 100, 1000)]
    assert max(consts) < 2 * consts[-1] + 1e-12
    assert consts[-1] <= math.comb(L, 2) + 1e-9


def _binomial_oracle(a, h, L):
    a, h = Fraction(a), Fraction(h)
    return float((a + h) ** L - a**L - L * a ** (L - 1) * h)


def test_remainder_B_examples():
    assert remainder_B(0.3, 0.2, ModelParams(0.5, 1, 1)) == 0
    assert remainder_B(0.5, 0.1, P) == pytest.approx(0.01, rel=1e-14)
    assert remainder_B(0.5, 0.1, ModelParams(0.5, 1, 3)) == pytest.approx(0.016, rel=1e-14)
    for L in range(1, 6):
        assert remainder_B(0.37, -0.21, ModelParams(0.5, 1, L)) == pytest.approx(
            _binomial_oracle(0.37, -0.21, L), rel=1e-12, abs=1e-15
        )


@settings(max_examples=300)
@given(st.integers(2, 6), st.floats(0, 1), st.floats(0, 1))
def test_remainder_B_bounds(L, a, b):
    h = b - a  # a and a + h both in [0, 1]
    B = remainder_B(a, h, ModelParams(0.5, 1, L))
    assert B >= -1e-15
    assert B <= h**L + (2**L - L - 2) * a * h**2 + 1e-15


# --- finite-N drift --------------------------------------------------------

def test_finite_n_drift_examples():
    d = finite_n_drift([0.3, 0.1, 0.0], P, 10)
    # level 1: (10*9 - 3*2)/90, level 2: (3*2 - 1*0)/90
    assert d.f_plus[0] == pytest.approx(0.5 * 84 / 90, rel=1e-14)
    assert d.f_plus[1] == pytest.approx(0.5 * 6 / 90, rel=1e-14)


def test_finite_n_decomposition():
    rng = np.random.default_rng(1)
    for L in (1, 2, 3):
        p = ModelParams(0.6, 1.0, L)
        for N in (L, 5, 50):
            v = np.sort(rng.integers(0, N + 1, 8))[::-1] / N
            fn = finite_n_drift(v, p, N)
            f = drift(v, p)
            np.testing.assert_allclose(fn.f - f.f, fn.g, atol=1e-14)
            np.testing.assert_array_equal(fn.f_minus, f.f_minus)
            if L == 1:
                np.testing.assert_allclose(fn.f, f.f, atol=1e-16)


# --- fixed point -----------------------------------------------------------

def test_fixed_point_examples():
    for L in (1, 2, 3):
        assert fixed_point(ModelParams(0.3, 1, L), 3).values[0] == pytest.approx(0.3, rel=1e-15)
    u = fixed_point(P, 5).values
    np.testing.assert_allclose(u[:4], [0.5, 0.125, 0.0078125, 3.0517578125e-5], rtol=1e-15)
    u1 = fixed_point(ModelParams(0.5, 1, 1), 10).values
    np.testing.assert_allclose(u1, 0.5 ** np.arange(1, 11), rtol=1e-14)


def test_fixed_point_rejects_unstable():
    with pytest.raises(DomainError):
        fixed_point(ModelParams(1.0, 1.0, 2), 5)


def test_fixed_point_large_kmax_underflows_cleanly():
    u = fixed_point(ModelParams(0.9, 1, 3), 200).values
    assert np.all(np.isfinite(u)) and u[-1] == 0.0
    assert tail_exponent(2, 10) == 1023.0
    assert tail_exponent(1, 7) == 7.0


@pytest.mark.parametrize("L", [1, 2, 3, 4])
@pytest.mark.parametrize("rho", [0.3, 0.5, 0.7, 0.9])
def test_fixed_point_recurrence(L, rho):
    p = ModelParams(rho, 1.3, L)
    u = np.concatenate(([1.0], fixed_point(p, 10).values))
    lhs = p.beta * u[2:] - p.alpha * u[1:-1] ** L
    rhs = p.beta * u[1:-1] - p.alpha * u[:-2] ** L
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# --- Jacobian --------------------------------------------------------------

@pytest.mark.parametrize("L", [1, 2, 3])
def test_jacobian_matches_finite_differences(L):
    p = ModelParams(0.7, 1.2, L)
    rng = np.random.default_rng(L)
    h = 1e-6
    for _ in range(20):
        v = random_tail(rng, 7)
        J = np.empty((7, 7))
        for j in range(7):
            e = np.zeros(7)
            e[j] = h
            J[:, j] = (drift(v + e, p).f - drift(v - e, p).f) / (2 * h)
        np.testing.assert_allclose(J, build_operator_K(v, p).dense(), atol=1e-6)


def test_second_order_remainder_identity():
    p = ModelParams(0.6, 1.0, 3)
    rng = np.random.default_rng(4)
    v = random_tail(rng, 6)
    x = 0.1 * rng.standard_normal(6)
    lhs = drift(v + x, p).f - drift(v, p).f
    rhs = build_operator_K(v, p).apply(x) + remainder_H(v, x, p)
    np.testing.assert_allclose(lhs, rhs, atol=1e-14)


# --- integration -----------------------------------------------------------

def test_ode_fixed_point_is_stationary():
    u = fixed_point(P, 12)
    tr = integrate_ode(u, P, 5.0, 0.01)
    np.testing.assert_allclose(tr.values, np.broadcast_to(u.values, tr.values.shape), atol=1e-13)
    np.testing.assert_array_equal(tr.values[0], u.values)


def test_ode_empty_network_relaxes_to_fixed_point():
    tr = integrate_ode(np.zeros(12), P, 50.0, 0.01)
    u1 = tr.values[:, 0]
    assert abs(u1[-1] - 0.5) < 1e-6
    assert np.all(np.diff(u1) >= -1e-15)


def test_ode_monotone_comparison():
    rng = np.random.default_rng(2)
    for _ in range(5):
        a = random_tail(rng, 10)
        b = np.maximum(a, random_tail(rng, 10))
        ta = integrate_ode(a, P, 10.0, 0.01)
        tb = integrate_ode(b, P, 10.0, 0.01)
        assert np.all(ta.values <= tb.values + 1e-14)


def test_ode_rejects_bad_step():
    with pytest.raises(StepRejected):
        integrate_ode(np.ones(4), ModelParams(5.0, 1.0, 2), 1.0, 1.0)
    with pytest.raises(DomainError):
        integrate_ode(np.zeros(4), P, 1.0, 0.0)


def test_rk4_fourth_order():
    u0 = np.zeros(12)
    ref = integrate_ode(u0, P, 4.0, 0.1 / 8).values[-1]
    e1 = np.max(np.abs(integrate_ode(u0, P, 4.0, 0.1).values[-1] - ref))
    e2 = np.max(np.abs(integrate_ode(u0, P, 4.0, 0.05).values[-1] - ref))
    assert e1 / e2 >= 12


def test_tail_sum_identity():
    kmax, dt = 12, 0.01
    ut = fixed_point(P, kmax).values
    tr = integrate_ode(np.zeros(kmax), P, 5.0, dt)
    y = tr.values - ut
    tails = np.cumsum(y[:, ::-1], axis=1)[:, ::-1]  # sum_{j >= k}
    dtails = (tails[2:] - tails[:-2]) / (2 * dt)
    yy = y[1:-1]
    y_prev = np.concatenate((np.zeros((len(yy), 1)), yy[:, :-1]), axis=1)
    u_prev = np.concatenate(([1.0], ut[:-1]))
    # beta L rho^(L^(k-1)) == alpha L u(k-1)^(L-1)
    coef = P.alpha * P.bigL * u_prev ** (P.bigL - 1)
    rhs = coef * y_prev + P.alpha * remainder_B(u_prev, y_prev, P) - P.beta * yy
    np.testing.assert_allclose(dtails, rhs, atol=1e-5)


def test_trajectory_at_and_csv():
    tr = integrate_ode(np.zeros(3), P, 1.0, 0.1)
    np.testing.assert_array_equal(tr.at(0.5), tr.values[5])
    mid = tr.at(0.55)
    np.testing.assert_allclose(mid, 0.5 * (tr.values[5] + tr.values[6]))
    lines = tr.to_csv().splitlines()
    assert lines[0] == "t,u1,u2,u3"
    assert len(lines) == 12
    with pytest.raises(ValueError):
        tr.at(3.0)


# --- decay fits ------------------------------------------------------------

def test_decay_fit_degenerate_at_fixed_point():
    u = fixed_point(P, 12)
    tr = integrate_ode(u, P, 10.0, 0.01)
    fit = fit_decay_rate(tr, u, make_geometric_weights(0.5, 12), (2, 8))
    assert fit.degenerate and math.isnan(fit.gamma_hat)


def test_decay_fit_positive_L2():
    u = fixed_point(P, 12)
    u0 = validate_tail(u.values + 0.1 * np.eye(12)[0])
    tr = integrate_ode(u0, P, 50.0, 0.01)
    fit = fit_decay_rate(tr, u, make_geometric_weights(0.5, 12), (20, 45))
    assert fit.gamma_hat > 0 and fit.residual < 0.05
    d = json.loads(fit.to_json())
    assert set(d) == {"gamma_hat", "c_hat", "window", "residual", "degenerate"}


def test_decay_fit_positive_L1():
    p = ModelParams(0.5, 1.0, 1)
    u = fixed_point(p, 60)
    u0 = validate_tail(np.minimum(u.values + 0.1 * np.eye(60)[0], 1))
    tr = integrate_ode(u0, p, 60.0, 0.02)
    fit = fit_decay_rate(tr, u, make_geometric_weights(0.5, 60), (20, 50))
    assert fit.gamma_hat > 0
