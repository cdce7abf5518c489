"""Gaussian fluctuation limit: noise rates, OU simulation, stationary covariance."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import eigh, expm, solve_continuous_lyapunov

from .linear_ops import TruncatedOperator, build_operator_K, build_stationary_K
from .meanfield import MeanFieldTrajectory, drift, fixed_point, rho_pow_L_pow, rho_power, tail_exponent
from .model import DomainError, ModelParams
from .rng import stream

log = logging.getLogger(__name__)

PSD_FLOOR = -1e-10
RESIDUAL_TOL = 1e-8


class ScheduleGap(ValueError):
    """The drift schedule does not cover the requested time horizon."""


@dataclass(frozen=True)
class NoiseSpec:
    vtilde: np.ndarray
    schedule: Optional[MeanFieldTrajectory] = None
    params: Optional[ModelParams] = None

    def at(self, t: float) -> np.ndarray:
        """Variance rates at time ``t``: ``F_+(u_t) + F_-(u_t)`` when scheduled."""
        if self.schedule is None:
            return self.vtilde
        d = drift(self.schedule.at(t), self.params)
        return d.f_plus + d.f_minus


@dataclass(frozen=True)
class CovarianceMatrix:
    sigma: np.ndarray
    method: str
    residual: float
    kmax: int
    clipped: int = 0  # eigenvalues raised to zero during PSD repair

    def to_dict(self) -> dict:
        return {
            "kmax": self.kmax,
            "method": self.method,
            "residual": self.residual,
            "sigma": self.sigma.ravel(order="C").tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "CovarianceMatrix":
        k = int(d["kmax"])
        return cls(np.asarray(d["sigma"], dtype=float).reshape(k, k), d["method"], float(d["residual"]), k)


def noise_variances(p: ModelParams, kmax: int) -> NoiseSpec:
    """``2 beta rho^((L^k-1)/(L-1)) (1 - rho^(L^k))`` for k = 1..kmax."""
    p.require_stable()
    v = np.array(
        [
            2 * p.beta * rho_power(p.rho, tail_exponent(p.bigL, k)) * (1 - rho_pow_L_pow(p.rho, p.bigL, k))
            for k in range(1, kmax + 1)
        ]
    )
    return NoiseSpec(v, params=p)


def scheduled_noise(p: ModelParams, schedule: MeanFieldTrajectory) -> NoiseSpec:
    """Time-dependent noise whose bracket follows the mean-field path."""
    d = drift(schedule.values[0], p)
    return NoiseSpec(d.f_plus + d.f_minus, schedule=schedule, params=p)


def hilbertian_ratio(p: ModelParams, theta: float, kmax: int) -> np.ndarray:
    """Ratios ``u(k+1)/theta^(k+1) / (u(k)/theta^k)`` of the fixed point against g_theta.

    Ratios eventually below 1 indicate summability of ``u`` in l1(g_theta), i.e.
    the noise is a Hilbertian Brownian motion in L2(g_theta).
    """
    u = fixed_point(p, kmax).values
    with np.errstate(divide="ignore", invalid="ignore"):
        return u[1:] / (theta * u[:-1])


# --- covariance ------------------------------------------------------------

def _lyapunov_residual(K: np.ndarray, S: np.ndarray, Q: np.ndarray) -> float:
    return float(np.max(np.abs(K @ S + S @ K.T + Q)))


def stationary_covariance(
    p: ModelParams, kmax: int, method: str = "lyapunov", operator: Optional[np.ndarray] = None
) -> CovarianceMatrix:
    """Solve ``K S + S K^T + diag(v) = 0`` on the truncation.

    ``method="quadrature"`` integrates ``exp(K t) diag(v) exp(K^T t)`` over
    ``[0, inf)`` instead.  ``operator`` replaces the stationary drift (used to
    check the decoupled case ``K = -beta I``).
    """
    p.require_stable()
    v = noise_variances(p, kmax).vtilde
    Q = np.diag(v)
    K = build_stationary_K(p, kmax).dense() if operator is None else np.asarray(operator, dtype=float)
    if method == "lyapunov":
        S = solve_continuous_lyapunov(K, -Q)
    elif method == "quadrature":
        S = _quadrature_covariance(K, Q)
    else:
        raise ValueError(f"unknown method {method!r}")
    S = 0.5 * (S + S.T)
    res = _lyapunov_residual(K, S, Q)
    if res > RESIDUAL_TOL:
        warnings.warn(f"Lyapunov residual {res:.3e} exceeds {RESIDUAL_TOL}", RuntimeWarning, stacklevel=2)
    return CovarianceMatrix(S, method, res, kmax)


def _quadrature_covariance(K: np.ndarray, Q: np.ndarray) -> np.ndarray:
    # [0, inf) mapped onto [0, 1) by t = s / (1 - s)
    def integrand(s):
        if s >= 1.0:
            return np.zeros_like(Q)
        t = s / (1.0 - s)
        E = expm(K * t)
        return E @ Q @ E.T / (1.0 - s) ** 2

    S, _ = quad_vec(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-11, limit=2000)
    return S


def transient_covariance(K: np.ndarray, Q: np.ndarray, t: float) -> np.ndarray:
    """``int_0^t exp(K s) Q exp(K^T s) ds`` via the Van Loan block exponential."""
    n = K.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -K
    M[:n, n:] = Q
    M[n:, n:] = K.T
    E = expm(M * t)
    F22 = E[n:, n:]
    G12 = E[:n, n:]
    C = F22.T @ G12
    return 0.5 * (C + C.T)


def factorize(cov: CovarianceMatrix) -> tuple[np.ndarray, int]:
    """Symmetric square root with eigenvalues in ``[PSD_FLOOR, 0)`` clipped to 0."""
    w, V = eigh(cov.sigma)
    if w.min() < PSD_FLOOR * max(1.0, abs(w).max()):
        raise np.linalg.LinAlgError(f"covariance is indefinite: smallest eigenvalue {w.min():.3e}")
    clipped = int(np.sum(w < 0))
    if clipped:
        log.info("clipped %d slightly negative eigenvalues", clipped)
    w = np.clip(w, 0.0, None)
    return V * np.sqrt(w), clipped


def sample_invariant(p: ModelParams, cov: CovarianceMatrix, n: int, seed: int, stream_id: int = 0) -> np.ndarray:
    """``n`` centered Gaussian vectors with covariance ``cov.sigma``; shape (n, kmax)."""
    if n == 0:
        return np.zeros((0, cov.kmax))
    A, _ = factorize(cov)
    rng = stream(seed, stream_id)
    xi = rng.standard_normal((n, cov.kmax))
    return xi @ A.T


# --- path simulation -------------------------------------------------------

def simulate_ou(
    z0,
    p: ModelParams,
    t_end: float,
    dt: float,
    seed: int,
    noise: NoiseSpec,
    drift_schedule: Optional[MeanFieldTrajectory] = None,
    n_paths: int = 1,
    exact: bool = False,
    operator: Optional[TruncatedOperator] = None,
    stream_id: int = 0,
    record_every: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Euler-Maruyama paths of ``dZ = K_t Z dt + diag(v_t)^(1/2) dB``.

    ``K_t`` is the stationary operator, or ``K(u_t)`` along ``drift_schedule``.
    ``z0`` may be one vector or an ``(n_paths, kmax)`` array.  With
    ``exact=True`` (stationary case only) each step samples the exact Gaussian
    transition.  Returns ``(times, paths)`` with ``paths`` of shape
    ``(n_records, n_paths, kmax)``; every ``record_every``-th step is kept,
    plus the first and last.
    """
    if not dt > 0:
        raise DomainError("dt must be > 0", "dt")
    kmax = len(noise.vtilde)
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise DomainError(f"t_end={t_end} is not a multiple of dt={dt}", "dt")
    if drift_schedule is not None:
        if drift_schedule.times[0] > 1e-12 or drift_schedule.times[-1] < t_end - 1e-12:
            raise ScheduleGap(
                f"schedule covers [{drift_schedule.times[0]}, {drift_schedule.times[-1]}], need [0, {t_end}]"
            )
        if exact:
            raise ValueError("exact transitions are only available for the stationary operator")
    z = np.broadcast_to(np.asarray(z0, dtype=float), (n_paths, kmax)).copy()
    rng = stream(seed, stream_id)
    times = dt * np.arange(n_steps + 1)
    keep = np.zeros(n_steps + 1, dtype=bool)
    keep[::record_every] = True
    keep[-1] = True
    slot = np.cumsum(keep) - 1
    out = np.empty((int(keep.sum()), n_paths, kmax))
    out[0] = z

    if drift_schedule is None:
        op = operator if operator is not None else build_stationary_K(p, kmax)
        Kd = op.dense()
        if exact:
            E = expm(Kd * dt)
            C = transient_covariance(Kd, np.diag(noise.vtilde), dt)
            A, _ = factorize(CovarianceMatrix(C, "transition", 0.0, kmax))
            for i in range(n_steps):
                z = z @ E.T + rng.standard_normal((n_paths, kmax)) @ A.T
                if keep[i + 1]:
                    out[slot[i + 1]] = z
            return times[keep], out
        _stability_check(Kd, dt)
        sd = np.sqrt(np.clip(noise.vtilde, 0, None) * dt)
        for i in range(n_steps):
            z = z + dt * (z @ Kd.T) + rng.standard_normal((n_paths, kmax)) * sd
            if keep[i + 1]:
                out[slot[i + 1]] = z
        return times[keep], out

    for i in range(n_steps):
        t = times[i]
        u_t = drift_schedule.at(t)
        Kd = build_operator_K(u_t, p).dense()
        v_t = noise.at(t) if noise.schedule is not None else noise.vtilde
        if i == 0:
            _stability_check(Kd, dt)
        sd = np.sqrt(np.clip(v_t, 0, None) * dt)
        z = z + dt * (z @ Kd.T) + rng.standard_normal((n_paths, kmax)) * sd
        if keep[i + 1]:
            out[slot[i + 1]] = z
    return times[keep], out


def _stability_check(K: np.ndarray, dt: float) -> None:
    nrm = np.linalg.norm(K, 2)
    if dt * nrm > 0.5:
        warnings.warn(f"dt * ||K|| = {dt * nrm:.3f} > 0.5; Euler-Maruyama may be inaccurate", RuntimeWarning, stacklevel=3)


def scheduled_moments(
    p: ModelParams, schedule: MeanFieldTrajectory, z0, t_list, dt: Optional[float] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the inhomogeneous OU process at ``t_list``.

    Integrates ``m' = K(u_t) m`` and ``C' = K C + C K^T + diag(v_t)`` with RK4
    on the schedule grid; returns arrays of shape (len(t_list), kmax) and
    (len(t_list), kmax, kmax).
    """
    dt = schedule.step if dt is None else dt
    kmax = schedule.kmax
    m = np.asarray(z0, dtype=float).copy()
    C = np.zeros((kmax, kmax))
    t_list = sorted(float(t) for t in t_list)

    def rhs(t, m, C):
        u = schedule.at(min(t, schedule.times[-1]))
        K = build_operator_K(u, p).dense()
        d = drift(u, p)
        return K @ m, K @ C + C @ K.T + np.diag(d.f_plus + d.f_minus)

    means, covs = [], []
    t = 0.0
    for target in t_list:
        n = int(round((target - t) / dt))
        for _ in range(n):
            k1m, k1c = rhs(t, m, C)
            k2m, k2c = rhs(t + dt / 2, m + dt / 2 * k1m, C + dt / 2 * k1c)
            k3m, k3c = rhs(t + dt / 2, m + dt / 2 * k2m, C + dt / 2 * k2c)
            k4m, k4c = rhs(t + dt, m + dt * k3m, C + dt * k3c)
            m = m + dt / 6 * (k1m + 2 * k2m + 2 * k3m + k4m)
            C = C + dt / 6 * (k1c + 2 * k2c + 2 * k3c + k4c)
            t += dt
        means.append(m.copy())
        covs.append(0.5 * (C + C.T))
    return np.array(means), np.array(covs)
