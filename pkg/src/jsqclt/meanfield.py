"""Deterministic mean-field layer.

Drift maps of the tail dynamics, their finite-N counterparts, the fixed point,
a fixed-step RK4 integrator and log-linear fitting of the relaxation rate.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .model import (
    DomainError,
    ModelParams,
    TailVector,
    WeightSequence,
    validate_tail,
    weighted_l2_norm,
)

STAGE_EPS = 1e-9
# exponents above this are evaluated in floating point instead of exact ints
_EXACT_EXPONENT_LIMIT = 2**62


class StepRejected(RuntimeError):
    """An RK4 stage left [-eps, 1+eps]; kmax too small or dt too large."""


@dataclass(frozen=True)
class DriftTriple:
    f_plus: np.ndarray
    f_minus: np.ndarray
    f: np.ndarray
    g: Optional[np.ndarray] = None  # finite-N correction G^N, when computed


@dataclass(frozen=True)
class MeanFieldTrajectory:
    times: np.ndarray
    values: np.ndarray  # shape (len(times), kmax)
    params: ModelParams
    step: float

    @property
    def kmax(self) -> int:
        return self.values.shape[1]

    @property
    def states(self) -> list[TailVector]:
        return [TailVector(row, self.kmax) for row in self.values]

    def at(self, t: float, tol: Optional[float] = None) -> np.ndarray:
        """State at time ``t`` by linear interpolation between grid points."""
        tol = self.step if tol is None else tol
        if t < self.times[0] - tol or t > self.times[-1] + tol:
            raise ValueError(f"time {t} outside trajectory [{self.times[0]}, {self.times[-1]}]")
        i = int(np.searchsorted(self.times, t))
        if i < len(self.times) and abs(self.times[i] - t) <= 1e-12 * max(1.0, abs(t)):
            return self.values[i].copy()
        i = min(max(i, 1), len(self.times) - 1)
        t0, t1 = self.times[i - 1], self.times[i]
        lam = min(max((t - t0) / (t1 - t0), 0.0), 1.0)
        return (1 - lam) * self.values[i - 1] + lam * self.values[i]

    def to_csv(self) -> str:
        return trajectory_csv(self.times, self.values)


@dataclass(frozen=True)
class DecayFit:
    gamma_hat: float
    c_hat: float
    window: tuple[float, float]
    residual: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "gamma_hat": self.gamma_hat,
            "c_hat": self.c_hat,
            "window": list(self.window),
            "residual": self.residual,
            "degenerate": self.degenerate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def trajectory_csv(times: Sequence[float], values: np.ndarray) -> str:
    values = np.asarray(values)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t"] + [f"u{k}" for k in range(1, values.shape[1] + 1)])
    for t, row in zip(times, values):
        writer.writerow([repr(float(t))] + [repr(float(x)) for x in row])
    return buf.getvalue()


# --- exponent helpers -------------------------------------------------------

def tail_exponent(bigL: int, k: int) -> float:
    """``(L^k - 1)/(L - 1)`` (equal to ``k`` when L = 1), exact while it fits."""
    if bigL == 1:
        return float(k)
    if k * math.log2(bigL) < 62:
        return float((bigL**k - 1) // (bigL - 1))
    return math.exp(k * math.log(bigL) - math.log(bigL - 1))


def rho_power(rho: float, exponent: float) -> float:
    """``rho ** exponent`` evaluated through logs; underflows cleanly to 0."""
    if exponent == 0:
        return 1.0
    if rho == 0:
        return 0.0
    x = exponent * math.log(rho)
    return math.exp(x) if x > -745.2 else 0.0


def rho_pow_L_pow(rho: float, bigL: int, k: int) -> float:
    """``rho ** (L ** k)``."""
    if k * math.log2(max(bigL, 1)) < 62:
        return rho_power(rho, float(bigL**k))
    return 0.0 if rho < 1 else math.inf


# --- drift maps ------------------------------------------------------------

def _vals(v) -> np.ndarray:
    return v.values if isinstance(v, TailVector) else np.asarray(v, dtype=float)


def _pad(vals: np.ndarray) -> np.ndarray:
    return np.concatenate(([1.0], vals, [0.0]))


def drift(v, p: ModelParams) -> DriftTriple:
    u = _pad(_vals(v))
    L = p.bigL
    f_plus = p.alpha * (u[:-2] ** L - u[1:-1] ** L)
    f_minus = p.beta * (u[1:-1] - u[2:])
    return DriftTriple(f_plus, f_minus, f_plus - f_minus)


def vector_field(u: np.ndarray, p: ModelParams) -> np.ndarray:
    """Right-hand side of the tail ODE on the truncated state (no validation)."""
    up = _pad(u)
    L = p.bigL
    return p.alpha * (up[:-2] ** L - up[1:-1] ** L) - p.beta * (up[1:-1] - up[2:])


def _falling_ratio(a, n_queues: int, bigL: int):
    """``(N a)_L / (N)_L`` as the product of ``(N a - i)/(N - i)``."""
    a = np.asarray(a, dtype=float)
    out = np.ones_like(a)
    for i in range(bigL):
        out = out * (n_queues * a - i) / (n_queues - i)
    return out


def correction_A(a, n_queues: int, p: ModelParams):
    """Without/with-replacement gap ``(N a)_L/(N)_L - a^L``."""
    if n_queues < p.bigL:
        raise DomainError(f"n_queues={n_queues} must be >= L={p.bigL}", "n_queues")
    a_arr = np.asarray(a, dtype=float)
    if p.bigL == 1:
        out = np.zeros_like(a_arr)
    else:
        out = _falling_ratio(a_arr, n_queues, p.bigL) - a_arr**p.bigL
    return float(out) if out.ndim == 0 else out


def correction_A_exact(k: int, n_queues: int, bigL: int) -> Fraction:
    """A^N(k/N) in rational arithmetic."""
    num = Fraction(1)
    for i in range(bigL):
        num *= Fraction(k - i, n_queues - i)
    return num - Fraction(k, n_queues) ** bigL


def remainder_B(a, h, p: ModelParams):
    """Binomial remainder ``(a+h)^L - a^L - L a^(L-1) h`` as ``sum_{i>=2} C(L,i) a^(L-i) h^i``."""
    a = np.asarray(a, dtype=float)
    h = np.asarray(h, dtype=float)
    L = p.bigL
    out = np.zeros(np.broadcast(a, h).shape)
    for i in range(2, L + 1):
        out = out + math.comb(L, i) * a ** (L - i) * h**i
    return float(out) if out.ndim == 0 else out


def finite_n_drift(v, p: ModelParams, n_queues: int) -> DriftTriple:
    """Drift of the N-queue system; ``g`` holds G^N = F^N - F."""
    vals = _vals(v)
    if n_queues < p.bigL:
        raise DomainError(f"n_queues={n_queues} must be >= L={p.bigL}", "n_queues")
    u = _pad(vals)
    ratio = _falling_ratio(u, n_queues, p.bigL)
    f_plus = p.alpha * (ratio[:-2] - ratio[1:-1])
    f_minus = p.beta * (u[1:-1] - u[2:])
    a_corr = _falling_ratio(u, n_queues, p.bigL) - u**p.bigL
    g = p.alpha * a_corr[:-2] - p.alpha * a_corr[1:-1]
    return DriftTriple(f_plus, f_minus, f_plus - f_minus, g)


def remainder_H(v, x, p: ModelParams) -> np.ndarray:
    """Second-order part of ``F(v + x) - F(v) - K(v) x``."""
    vp = _pad(_vals(v))
    xp = np.concatenate(([0.0], np.asarray(x, dtype=float), [0.0]))
    b = remainder_B(vp, xp, p)
    return p.alpha * b[:-2] - p.alpha * b[1:-1]


def fixed_point(p: ModelParams, kmax: int) -> TailVector:
    """Stationary tail profile ``rho^((L^k - 1)/(L - 1))``."""
    p.require_stable()
    vals = [rho_power(p.rho, tail_exponent(p.bigL, k)) for k in range(1, kmax + 1)]
    return TailVector(np.array(vals), kmax)


# --- integration -----------------------------------------------------------

def _rk4_step(u: np.ndarray, p: ModelParams, dt: float) -> np.ndarray:
    lo, hi = -STAGE_EPS, 1 + STAGE_EPS
    k1 = vector_field(u, p)
    s = u + 0.5 * dt * k1
    _check_stage(s, lo, hi)
    k2 = vector_field(s, p)
    s = u + 0.5 * dt * k2
    _check_stage(s, lo, hi)
    k3 = vector_field(s, p)
    s = u + dt * k3
    _check_stage(s, lo, hi)
    k4 = vector_field(s, p)
    out = u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    _check_stage(out, lo, hi)
    return out


def _check_stage(s: np.ndarray, lo: float, hi: float) -> None:
    if s.min() < lo or s.max() > hi:
        raise StepRejected(
            f"RK4 stage left [{lo}, {hi}] (min {s.min()}, max {s.max()}); "
            "reduce dt or increase kmax"
        )


def integrate_ode(
    u0, p: ModelParams, t_end: float, dt: float, record_every: int = 1
) -> MeanFieldTrajectory:
    """Classical RK4 on the truncated tail ODE with u(0)=1, u(kmax+1)=0.

    Emitted states are clamped to [0, 1] and made nonincreasing before
    validation; ``record_every`` thins the stored grid.
    """
    if not dt > 0:
        raise DomainError(f"dt must be > 0, got {dt}", "dt")
    if t_end < 0:
        raise DomainError(f"t_end must be >= 0, got {t_end}", "t_end")
    u0v = u0 if isinstance(u0, TailVector) else validate_tail(u0)
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise DomainError(f"t_end={t_end} is not a multiple of dt={dt}", "dt")
    u = np.array(u0v.values, dtype=float)
    times = [0.0]
    rows = [u.copy()]
    for i in range(1, n_steps + 1):
        u = _rk4_step(u, p, dt)
        np.clip(u, 0.0, 1.0, out=u)
        np.minimum.accumulate(u, out=u)
        if i % record_every == 0 or i == n_steps:
            times.append(i * dt)
            rows.append(u.copy())
    values = np.array(rows)
    for row in values[1:]:
        validate_tail(row)
    return MeanFieldTrajectory(np.array(times), values, p, dt)


def fit_decay_rate(
    traj: MeanFieldTrajectory,
    target,
    w: WeightSequence,
    window: tuple[float, float],
) -> DecayFit:
    """Least-squares line through ``log ||u_t - target||_{L2(w)}`` over ``window``.

    A distance that vanishes anywhere in the window gives a degenerate fit
    (``degenerate=True``, NaN rate) rather than an exception.
    """
    t0, t1 = window
    if not t0 < t1:
        raise ValueError(f"empty window {window}")
    if t0 < traj.times[0] - 1e-12 or t1 > traj.times[-1] + 1e-12:
        raise ValueError(f"window {window} outside trajectory")
    tv = _vals(target)
    mask = (traj.times >= t0 - 1e-12) & (traj.times <= t1 + 1e-12)
    ts = traj.times[mask]
    norms = np.array([weighted_l2_norm(row - tv, w) for row in traj.values[mask]])
    if len(ts) < 2 or np.any(norms <= 0) or not np.all(np.isfinite(norms)):
        return DecayFit(math.nan, math.nan, (t0, t1), math.nan, degenerate=True)
    logn = np.log(norms)
    slope, intercept = np.polyfit(ts, logn, 1)
    residual = float(np.max(np.abs(logn - (slope * ts + intercept))))
    return DecayFit(float(-slope), float(math.exp(intercept)), (t0, t1), residual)
