"""Linearized operators and their spectral theory on a finite truncation.

The stationary operator is the adjoint of a birth-death generator with birth
rates ``beta L rho^(L^k)`` and constant death rate ``beta``; it is symmetric in
L2(pi) for the potential coefficients ``pi``.  All truncations use a Dirichlet
boundary: coordinates beyond ``kmax`` are zero.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal, expm

from .meanfield import fixed_point, rho_pow_L_pow, tail_exponent
from .model import DomainError, ModelParams, TailVector, WeightSequence

UNDERFLOW_FLOOR = 1e-300
# log-range of diag(pi)^(1/2) beyond which eigenvector round-off is amplified
EIG_LOG_SCALE = 12.0


@dataclass(frozen=True)
class TruncatedOperator:
    sub: np.ndarray   # entry (k+1, k), length kmax-1
    diag: np.ndarray  # length kmax
    sup: np.ndarray   # entry (k, k+1), length kmax-1
    kmax: int
    basis_weights: Optional[WeightSequence] = None

    def __post_init__(self):
        if len(self.diag) != self.kmax or len(self.sub) != self.kmax - 1 or len(self.sup) != self.kmax - 1:
            raise ValueError("inconsistent band lengths for tridiagonal operator")

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.sub, -1) + np.diag(self.sup, 1)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = self.diag * x
        y[1:] += self.sub * x[:-1]
        y[:-1] += self.sup * x[1:]
        return y

    def coordinate_dump(self) -> str:
        """Nonzero entries as ``row col value`` lines (1-based indices)."""
        lines = [f"% {self.kmax} {self.kmax}"]
        for i in range(self.kmax):
            if i > 0:
                lines.append(f"{i + 1} {i} {float(self.sub[i - 1])!r}")
            lines.append(f"{i + 1} {i + 1} {float(self.diag[i])!r}")
            if i < self.kmax - 1:
                lines.append(f"{i + 1} {i + 2} {float(self.sup[i])!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class BirthDeathRates:
    lam: np.ndarray  # lambda_k, k = 1..kmax
    mu: np.ndarray
    kmax: int


@dataclass(frozen=True)
class SpectralEstimate:
    gamma_hat: float
    eigenvalues: np.ndarray  # spectrum of -S at the largest truncation, ascending
    kmax_sequence: list[int]
    gammas: list[float]
    richardson_gap: float
    sigma_proxy: Optional[float]
    converged: bool

    def to_dict(self) -> dict:
        return {
            "gamma_hat": self.gamma_hat,
            "eigenvalues": self.eigenvalues.tolist(),
            "kmax_sequence": list(self.kmax_sequence),
            "gammas": list(self.gammas),
            "richardson_gap": self.richardson_gap,
            "sigma_proxy": self.sigma_proxy,
            "converged": self.converged,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def build_operator_K(v, p: ModelParams) -> TruncatedOperator:
    """Jacobian of the tail drift at ``v`` (tridiagonal, Dirichlet at kmax)."""
    vals = v.values if isinstance(v, TailVector) else np.asarray(v, dtype=float)
    kmax = len(vals)
    a = p.alpha * p.bigL * vals ** (p.bigL - 1)
    return TruncatedOperator(
        sub=a[:-1].copy(),
        diag=-(a + p.beta),
        sup=np.full(kmax - 1, float(p.beta)),
        kmax=kmax,
    )


def birth_death_rates(p: ModelParams, kmax: int) -> BirthDeathRates:
    p.require_stable()
    lam = np.array([p.beta * p.bigL * rho_pow_L_pow(p.rho, p.bigL, k) for k in range(1, kmax + 1)])
    return BirthDeathRates(lam, np.full(kmax, float(p.beta)), kmax)


def build_stationary_K(p: ModelParams, kmax: int) -> TruncatedOperator:
    """Linearization at the fixed point, written through the birth rates."""
    rates = birth_death_rates(p, kmax)
    lam = rates.lam
    return TruncatedOperator(
        sub=lam[:-1].copy(),
        diag=-(lam + p.beta),
        sup=np.full(kmax - 1, float(p.beta)),
        kmax=kmax,
    )


def potential_coefficients(p: ModelParams, kmax: int) -> WeightSequence:
    """Detailed-balance weights ``pi(k+1) = L rho^(L^k) pi(k)``, ``pi(1) = 1``.

    Built by the recurrence and cross-checked against the closed form
    ``L^(k-1) rho^((L^k - L)/(L - 1))`` in log space.  Entries below 1e-300 are
    clamped to the floor and the ``underflow`` flag is set.
    """
    p.require_stable()
    L, rho = p.bigL, p.rho
    vals = np.empty(kmax)
    vals[0] = 1.0
    for k in range(1, kmax):
        vals[k] = vals[k - 1] * L * rho_pow_L_pow(rho, L, k)
    underflow = bool(np.any(vals < UNDERFLOW_FLOOR))
    for k in range(1, kmax + 1):
        expo = tail_exponent(L, k) - 1.0  # (L^k - L)/(L - 1)
        log_closed = (k - 1) * math.log(L) + expo * math.log(rho)
        if log_closed > math.log(UNDERFLOW_FLOOR) and vals[k - 1] >= UNDERFLOW_FLOOR:
            if abs(math.log(vals[k - 1]) - log_closed) > 1e-9 * max(1.0, abs(log_closed)):
                raise ArithmeticError(f"potential coefficient mismatch at k={k}")
    if underflow:
        vals = np.maximum(vals, UNDERFLOW_FLOOR)
    return WeightSequence("potential", vals, underflow=underflow)


def symmetrize(op: TruncatedOperator, pi: Optional[WeightSequence] = None) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric tridiagonal ``(diag, offdiag)`` similar to ``op``.

    The similarity is ``diag(pi)^(-1/2) op diag(pi)^(1/2)``; the off-diagonal is
    formed as ``sqrt(sup * sub)`` so the result is symmetric by construction and
    never touches the (possibly underflowing) weights themselves.
    """
    if pi is not None and pi.kmax != op.kmax:
        raise ValueError("pi length does not match operator truncation")
    off = np.sqrt(op.sup * op.sub)
    return op.diag.copy(), off


def symmetric_matrix(op: TruncatedOperator) -> np.ndarray:
    d, e = symmetrize(op)
    return np.diag(d) + np.diag(e, 1) + np.diag(e, -1)


def kmg_polynomials(p: ModelParams, n: int, x: float, scaled: bool = False):
    """Values ``Q_1(x), ..., Q_n(x)`` of the birth-death orthogonal polynomials.

    Uses ``Q_0 = 0, Q_1 = 1`` and
    ``lam_k Q_{k+1} = (lam_k + beta - x) Q_k - beta Q_{k-1}``.
    With ``scaled=True`` returns ``(mantissas, exponents)`` with
    ``Q_k = mantissa_k * 2**exponent_k``, avoiding overflow for large ``n``.
    """
    if n < 1:
        raise DomainError("n must be >= 1", "n")
    rates = birth_death_rates(p, max(n, 1))
    lam, beta = rates.lam, p.beta
    mant = np.zeros(n)
    expo = np.zeros(n, dtype=np.int64)
    q_prev, q_cur, e_cur = 0.0, 1.0, 0
    mant[0], expo[0] = 1.0, 0
    for k in range(1, n):
        if lam[k - 1] == 0:
            raise FloatingPointError(f"birth rate underflows at k={k}; recurrence undefined")
        q_next = ((lam[k - 1] + beta - x) * q_cur - beta * q_prev) / lam[k - 1]
        m, e = math.frexp(q_next) if q_next != 0 else (0.0, 0)
        if e != 0:
            # rescale the pair so the working magnitudes stay near 1
            q_prev = math.ldexp(q_cur, -e)
            q_cur = m
            e_cur += e
        else:
            q_prev, q_cur = q_cur, q_next
        mant[k], expo[k] = q_cur, e_cur
    if scaled:
        return mant, expo
    with np.errstate(over="ignore"):
        return mant * np.exp2(expo.astype(float))


def kmg_zeros(p: ModelParams, n: int) -> np.ndarray:
    """Zeros of ``Q_n``: eigenvalues of the leading (n-1) block of ``-S``."""
    if n < 2:
        return np.empty(0)
    op = build_stationary_K(p, n - 1)
    d, e = symmetrize(op)
    if n - 1 == 1:
        return np.array([-d[0]])
    return eigh_tridiagonal(-d, -e, eigvals_only=True)


def _smallest_eig(p: ModelParams, kmax: int) -> tuple[float, np.ndarray]:
    op = build_stationary_K(p, kmax)
    d, e = symmetrize(op)
    if kmax == 1:
        ev = np.array([-d[0]])
    else:
        ev = eigh_tridiagonal(-d, -e, eigvals_only=True)
    return float(ev[0]), ev


def spectral_gap(p: ModelParams, kmax_list: Sequence[int], tol: Optional[float] = None) -> SpectralEstimate:
    """Least eigenvalue of the symmetrized ``-K`` over increasing truncations.

    ``richardson_gap`` is the change between the two largest truncations; the
    estimate counts as converged when it is below ``tol`` (default 1e-6 beta).
    """
    p.require_stable()
    ks = [int(k) for k in kmax_list]
    if not ks or any(b <= a for a, b in zip(ks, ks[1:])):
        raise DomainError("kmax_list must be a nonempty increasing list", "kmax_list")
    tol = 1e-6 * p.beta if tol is None else tol
    gammas, ev = [], None
    for k in ks:
        g, ev = _smallest_eig(p, k)
        gammas.append(g)
    gap = abs(gammas[-1] - gammas[-2]) if len(gammas) > 1 else math.nan
    converged = bool(len(gammas) > 1 and gap < tol)
    if not converged:
        warnings.warn(f"spectral gap not converged: richardson gap {gap}", RuntimeWarning, stacklevel=2)
    sigma = p.beta if p.bigL >= 2 else None
    return SpectralEstimate(gammas[-1], ev, ks, gammas, gap, sigma, converged)


def semigroup_apply(op: TruncatedOperator, t: float, z0, method: str = "eig") -> np.ndarray:
    """``exp(op t) z0`` on the truncation.

    ``method="expm"`` uses scaling-and-squaring on the dense matrix;
    ``method="eig"`` diagonalizes the symmetrized operator and conjugates back.
    The eigen path requires strictly positive off-diagonal products and a
    similarity transform with condition number below ``exp(2 * EIG_LOG_SCALE)``;
    otherwise it falls back to ``expm``.
    """
    if t < 0:
        raise DomainError("t must be >= 0", "t")
    z0 = np.asarray(z0, dtype=float)
    if t == 0:
        return z0.copy()
    if method == "expm":
        return expm(op.dense() * t) @ z0
    if method != "eig":
        raise ValueError(f"unknown method {method!r}")
    prod = op.sup * op.sub
    if op.kmax > 1 and (np.any(prod <= 0) or not _scales_ok(op)):
        return expm(op.dense() * t) @ z0
    d, e = symmetrize(op)
    # op = D^{1/2} S D^{-1/2} with D(k+1)/D(k) = sub(k)/sup(k)
    log_s = np.concatenate(([0.0], np.cumsum(0.5 * (np.log(op.sub) - np.log(op.sup))))) if op.kmax > 1 else np.zeros(1)
    if op.kmax == 1:
        return np.exp(d[0] * t) * z0
    w, V = eigh_tridiagonal(d, e)
    y = np.exp(-log_s) * z0
    y = V @ (np.exp(w * t) * (V.T @ y))
    return np.exp(log_s) * y


def _scales_ok(op: TruncatedOperator) -> bool:
    ls = np.cumsum(0.5 * (np.log(op.sub) - np.log(op.sup)))
    return bool(np.all(np.isfinite(ls)) and np.ptp(np.concatenate(([0.0], ls))) < EIG_LOG_SCALE)


def operator_norm_weighted(op: TruncatedOperator, w: WeightSequence) -> float:
    """Operator norm induced by L2(w): ``||W^{-1/2} K W^{1/2}||_2``."""
    s = np.sqrt(w.values[: op.kmax])
    M = op.dense() * s[None, :] / s[:, None]
    return float(np.linalg.norm(M, 2))


def bound_constant(p: ModelParams, c: float, d: float) -> float:
    """Explicit bound ``beta sqrt((2L+2)(L rho^(2L) + L d + 1/c + 1))`` on ||K||."""
    L = p.bigL
    return p.beta * math.sqrt((2 * L + 2) * (L * p.rho ** (2 * L) + L * d + 1 / c + 1))


def comparison_operator(p: ModelParams, theta: float, kmax: int) -> TruncatedOperator:
    """Diagnostic only: birth rates ``max(beta L rho^(L^k) + alpha(1 + (2^L-L-2) u(k)), beta theta)``.

    Used to reproduce the comparison gap ``beta (1 - sqrt(theta))^2`` when
    validating decay fits.
    """
    u = fixed_point(p, kmax).values
    L = p.bigL
    lam = np.array([p.beta * L * rho_pow_L_pow(p.rho, L, k) for k in range(1, kmax + 1)])
    lam_hat = np.maximum(lam + p.alpha * (1 + (2**L - L - 2) * u), p.beta * theta)
    return TruncatedOperator(lam_hat[:-1].copy(), -(lam_hat + p.beta), np.full(kmax - 1, float(p.beta)), kmax)
