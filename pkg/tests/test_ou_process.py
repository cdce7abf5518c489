import json
import math
from contextlib import nullcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from jsqclt.linear_ops import TruncatedOperator, build_stationary_K, semigroup_apply
from jsqclt.meanfield import MeanFieldTrajectory, drift, fixed_point, integrate_ode
from jsqclt.model import DomainError, ModelParams
from jsqclt.ou_process import (
    CovarianceMatrix,
    NoiseSpec,
    ScheduleGap,
    factorize,
    hilbertian_ratio,
    noise_variances,
    sample_invariant,
    scheduled_moments,
    scheduled_noise,
    simulate_ou,
    stationary_covariance,
    transient_covariance,
)

P2 = ModelParams(0.5, 1.0, 2)


def cov_within(samples, sigma, rel, n_se=3):
    """Entrywise check of the sample second moment against sigma.

    Factorizing sigma is only accurate to round-off relative to its norm, so
    entries many orders below the largest get an absolute floor at that level.
    """
    n = len(samples)
    prod = samples[:, :, None] * samples[:, None, :]
    est = prod.mean(axis=0)
    se = prod.std(axis=0, ddof=1) / math.sqrt(n)
    floor = 1e-12 * np.max(np.abs(sigma))
    return np.abs(est - sigma) <= rel * np.abs(sigma) + n_se * se + floor


def test_noise_examples():
    nz = noise_variances(P2, 6)
    assert nz.vtilde[0] == pytest.approx(0.75, rel=1e-15)
    u = fixed_point(P2, 6)
    d = drift(u, P2)
    np.testing.assert_allclose(nz.vtilde, d.f_plus + d.f_minus, rtol=1e-12, atol=1e-300)
    assert np.all(nz.vtilde >= 0)


@pytest.mark.parametrize("bigL", [1, 2, 3])
def test_noise_small_rho_ordering(bigL):
    ratios = []
    for rho in (1e-1, 1e-2, 1e-3):
        v = noise_variances(ModelParams(rho, 1.0, bigL), 3).vtilde
        ratios.append(v[1] / v[0])
    assert ratios[0] > ratios[1] > ratios[2]
    assert ratios[-1] < 1e-2


def test_stationary_noise_formula():
    p = ModelParams(0.7, 1.3, 3)
    u = fixed_point(p, 8).padded()
    np.testing.assert_allclose(noise_variances(p, 8).vtilde, 2 * p.beta * (u[1:-1] - u[2:]), rtol=1e-12)


def test_schedule_at_fixed_point_reduces_to_stationary_noise():
    kmax = 12
    u = fixed_point(P2, kmax).values
    times = np.linspace(0, 5, 51)
    sched = MeanFieldTrajectory(times, np.tile(u, (51, 1)), P2, 0.1)
    nz = scheduled_noise(P2, sched)
    ref = noise_variances(P2, kmax).vtilde
    for t in (0.0, 1.23, 5.0):
        np.testing.assert_allclose(nz.at(t), ref, rtol=1e-12, atol=1e-300)


def test_hilbertian_ratio_eventually_below_one():
    r = hilbertian_ratio(P2, P2.rho, 6)
    assert r[-1] < 1
    assert np.all(np.diff(r) < 0)


def test_ou_zero_case():
    nz = NoiseSpec(np.zeros(5))
    t, paths = simulate_ou(np.zeros(5), P2, 2.0, 0.01, 0, nz, n_paths=3)
    assert paths.shape == (len(t), 3, 5)
    assert np.all(paths == 0)


def test_ou_deterministic_limit_weak_order():
    kmax = 6
    op = build_stationary_K(P2, kmax)
    z0 = np.linspace(1, 0.2, kmax)
    exact = semigroup_apply(op, 2.0, z0)
    nz = NoiseSpec(np.zeros(kmax))
    gaps = []
    for dt in (0.02, 0.01, 0.005):
        _, paths = simulate_ou(z0, P2, 2.0, dt, 0, nz)
        gaps.append(np.max(np.abs(paths[-1, 0] - exact)))
    assert 1.8 < gaps[0] / gaps[1] < 2.2
    assert 1.8 < gaps[1] / gaps[2] < 2.2


def test_ou_covariance_weak_order():
    kmax = 6
    nz = noise_variances(P2, kmax)
    K = build_stationary_K(P2, kmax).dense()
    ref = transient_covariance(K, np.diag(nz.vtilde), 2.0)[0, 0]
    errs = []
    for dt in (0.2, 0.1):
        with pytest.warns(RuntimeWarning) if dt * np.linalg.norm(K, 2) > 0.5 else nullcontext():
            _, paths = simulate_ou(np.zeros(kmax), P2, 2.0, dt, 3, nz, n_paths=200_000)
        errs.append(np.mean(paths[-1, :, 0] ** 2) - ref)
    assert 1.5 < errs[0] / errs[1] < 3.0


def test_ou_stationary_start_keeps_invariant_law():
    kmax = 8
    cov = stationary_covariance(P2, kmax)
    z0 = sample_invariant(P2, cov, 10_000, seed=1)
    _, paths = simulate_ou(z0, P2, 10.0, 0.01, 2, noise_variances(P2, kmax), n_paths=10_000, record_every=1000)
    assert np.all(cov_within(paths[-1][:, :4], cov.sigma[:4, :4], 0.05))


def test_ou_exact_mode_stationary():
    kmax = 8
    cov = stationary_covariance(P2, kmax)
    z0 = sample_invariant(P2, cov, 20_000, seed=4)
    _, paths = simulate_ou(z0, P2, 5.0, 0.5, 5, noise_variances(P2, kmax), n_paths=20_000, exact=True)
    assert np.all(cov_within(paths[-1][:, :4], cov.sigma[:4, :4], 0.02))


def test_ou_ergodicity_independent_of_start():
    kmax = 6
    cov = stationary_covariance(P2, kmax)
    nz = noise_variances(P2, kmax)
    finals = []
    for seed, z0 in ((7, 5.0 * np.ones(kmax)), (8, -3.0 * np.eye(kmax)[0])):
        _, paths = simulate_ou(z0, P2, 30.0, 0.5, seed, nz, n_paths=10_000, exact=True)
        finals.append(paths[-1])
        assert np.all(cov_within(paths[-1][:, :3], cov.sigma[:3, :3], 0.05))
        m = paths[-1].mean(axis=0)
        assert np.all(np.abs(m) <= 4 * paths[-1].std(axis=0) / 100)
    a = np.cov(finals[0][:, :3].T)
    b = np.cov(finals[1][:, :3].T)
    assert np.max(np.abs(a - b)) < 0.1 * np.max(np.abs(cov.sigma[:3, :3]))


def test_ou_determinism_and_validation():
    nz = noise_variances(P2, 4)
    a = simulate_ou(np.ones(4), P2, 1.0, 0.1, 9, nz, n_paths=2)[1]
    b = simulate_ou(np.ones(4), P2, 1.0, 0.1, 9, nz, n_paths=2)[1]
    np.testing.assert_array_equal(a, b)
    with pytest.raises(DomainError):
        simulate_ou(np.ones(4), P2, 1.0, 0.0, 9, nz)
    with pytest.raises(DomainError):
        simulate_ou(np.ones(4), P2, 1.0, 0.3, 9, nz)
    with pytest.warns(RuntimeWarning):
        simulate_ou(np.ones(4), P2, 1.0, 0.5, 9, nz)


def test_ou_schedule_gap_and_exact_restriction():
    u = integrate_ode(fixed_point(P2, 5), P2, 1.0, 0.01)
    nz = scheduled_noise(P2, u)
    with pytest.raises(ScheduleGap):
        simulate_ou(np.zeros(5), P2, 2.0, 0.01, 0, nz, drift_schedule=u)
    with pytest.raises(ValueError):
        simulate_ou(np.zeros(5), P2, 1.0, 0.01, 0, nz, drift_schedule=u, exact=True)


def test_scheduled_ou_matches_moments():
    u0 = np.array([0.8, 0.4, 0.1, 0.0, 0.0])
    u = integrate_ode(u0, P2, 2.0, 0.01)
    nz = scheduled_noise(P2, u)
    z0 = np.array([1.0, -0.5, 0.0, 0.0, 0.0])
    _, paths = simulate_ou(z0, P2, 2.0, 0.01, 6, nz, drift_schedule=u, n_paths=20_000, record_every=200)
    means, covs = scheduled_moments(P2, u, z0, [2.0])
    end = paths[-1]
    se = end.std(axis=0) / math.sqrt(len(end))
    assert np.all(np.abs(end.mean(axis=0) - means[0]) <= 4 * se + 0.02 * np.abs(means[0]))
    centered = end - end.mean(axis=0)
    assert np.all(cov_within(centered[:, :3], covs[0][:3, :3], 0.05))


def test_scheduled_moments_at_fixed_point():
    kmax = 6
    u = fixed_point(P2, kmax).values
    sched = MeanFieldTrajectory(np.linspace(0, 3, 301), np.tile(u, (301, 1)), P2, 0.01)
    z0 = np.linspace(1, 0, kmax)
    means, covs = scheduled_moments(P2, sched, z0, [1.0, 3.0])
    K = build_stationary_K(P2, kmax).dense()
    Q = np.diag(noise_variances(P2, kmax).vtilde)
    np.testing.assert_allclose(means[1], expm(3.0 * K) @ z0, atol=1e-9)
    np.testing.assert_allclose(covs[0], transient_covariance(K, Q, 1.0), atol=1e-9)


def test_decoupled_covariance():
    kmax = 6
    p = ModelParams(0.5, 1.3, 1)
    cov = stationary_covariance(p, kmax, operator=-p.beta * np.eye(kmax))
    np.testing.assert_allclose(cov.sigma, np.diag(noise_variances(p, kmax).vtilde) / (2 * p.beta), atol=1e-15)


def test_lyapunov_matches_quadrature():
    a = stationary_covariance(P2, 40)
    b = stationary_covariance(P2, 40, method="quadrature")
    np.testing.assert_allclose(a.sigma, b.sigma, atol=1e-6)
    assert a.residual < 1e-8
    with pytest.raises(ValueError):
        stationary_covariance(P2, 5, method="spectral")


def test_covariance_L1_matches_bernoulli():
    # for L = 1 the queues are independent M/M/1 queues
    p = ModelParams(0.5, 1.0, 1)
    cov = stationary_covariance(p, 60)
    r = p.rho ** np.arange(1, 61)
    exact = np.minimum.outer(r, r) - np.outer(r, r)
    np.testing.assert_allclose(cov.sigma[:10, :10], exact[:10, :10], atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 0.95), st.integers(1, 4), st.integers(2, 25))
def test_covariance_psd_and_symmetric(rho, bigL, kmax):
    cov = stationary_covariance(ModelParams(rho, 1.0, bigL), kmax)
    assert np.max(np.abs(cov.sigma - cov.sigma.T)) <= 1e-12
    assert np.linalg.eigvalsh(cov.sigma).min() >= -1e-10


@pytest.mark.parametrize("t", [0.5, 2.0])
@pytest.mark.parametrize("p", [P2, ModelParams(0.8, 1.0, 3), ModelParams(0.5, 1.0, 1)])
def test_stationarity_under_flow(p, t):
    kmax = 10
    cov = stationary_covariance(p, kmax)
    K = build_stationary_K(p, kmax).dense()
    Q = np.diag(noise_variances(p, kmax).vtilde)
    E = expm(K * t)
    np.testing.assert_allclose(E @ cov.sigma @ E.T + transient_covariance(K, Q, t), cov.sigma, atol=1e-8)


def test_sample_invariant():
    kmax = 10
    cov = stationary_covariance(P2, kmax)
    assert sample_invariant(P2, cov, 0, 1).shape == (0, kmax)
    x = sample_invariant(P2, cov, 100_000, seed=3)
    assert np.all(cov_within(x, cov.sigma, 0.03))
    se = x.std(axis=0) / math.sqrt(len(x))
    assert np.all(np.abs(x.mean(axis=0)) <= 4 * se + 1e-300)
    np.testing.assert_array_equal(x, sample_invariant(P2, cov, 100_000, seed=3))


def test_factorize_psd_repair():
    S = np.diag([1.0, 0.5, -1e-12])
    A, clipped = factorize(CovarianceMatrix(S, "lyapunov", 0.0, 3))
    assert clipped == 1
    np.testing.assert_allclose(A @ A.T, np.diag([1.0, 0.5, 0.0]), atol=1e-15)
    with pytest.raises(np.linalg.LinAlgError):
        factorize(CovarianceMatrix(np.diag([1.0, -0.1]), "lyapunov", 0.0, 2))


def test_covariance_json_roundtrip():
    cov = stationary_covariance(P2, 4)
    d = json.loads(cov.to_json())
    assert d["kmax"] == 4 and d["method"] == "lyapunov"
    assert d["sigma"][1] == cov.sigma[0, 1]
    back = CovarianceMatrix.from_dict(d)
    np.testing.assert_array_equal(back.sigma, cov.sigma)


def test_operator_override_in_simulation():
    kmax = 3
    op = TruncatedOperator(np.zeros(2), -np.ones(3), np.zeros(2), 3)
    _, paths = simulate_ou(np.ones(kmax), P2, 1.0, 0.001, 0, NoiseSpec(np.zeros(kmax)), operator=op, exact=True)
    np.testing.assert_allclose(paths[-1, 0], math.exp(-1.0), rtol=1e-12)
