"""Core state types: model parameters, tail vectors, weight sequences and norms.

Every sequence is truncated at ``kmax``; entries beyond it are exactly zero and
the tail vector carries an implicit ``v(0) = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

LATTICE_TOL = 1e-12


class DomainError(ValueError):
    """Raised when a parameter lies outside the domain of an operation."""

    def __init__(self, message: str, field_name: Optional[str] = None):
        super().__init__(message)
        self.field_name = field_name


class TailValidationError(ValueError):
    """A raw sequence is not an element of the tail space; ``index`` is 1-based."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class ModelParams:
    alpha: float
    beta: float
    bigL: int

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError(f"alpha must be > 0, got {self.alpha}", "alpha")
        if not self.beta > 0:
            raise DomainError(f"beta must be > 0, got {self.beta}", "beta")
        if int(self.bigL) != self.bigL or self.bigL < 1:
            raise DomainError(f"bigL must be an integer >= 1, got {self.bigL}", "bigL")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "bigL", int(self.bigL))

    @classmethod
    def pure_death(cls, beta: float, bigL: int) -> "ModelParams":
        """Diagnostic parameters with no arrivals (alpha = 0)."""
        p = cls(1.0, beta, bigL)
        object.__setattr__(p, "alpha", 0.0)
        return p

    @property
    def rho(self) -> float:
        return self.alpha / self.beta

    def require_stable(self) -> None:
        if not self.rho < 1:
            raise DomainError(f"rho = {self.rho} must be < 1", "rho")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "bigL": self.bigL, "rho": self.rho}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(alpha=float(d["alpha"]), beta=float(d["beta"]), bigL=int(d["bigL"]))


@dataclass(frozen=True)
class TailVector:
    values: np.ndarray
    kmax: int
    n_queues: Optional[int] = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if vals.shape != (self.kmax,):
            raise ValueError(f"values has shape {vals.shape}, expected ({self.kmax},)")

    def padded(self) -> np.ndarray:
        """Return ``(v(0), v(1), ..., v(kmax), v(kmax+1))`` with the boundary values."""
        out = np.empty(self.kmax + 2)
        out[0] = 1.0
        out[1:-1] = self.values
        out[-1] = 0.0
        return out

    def __len__(self):
        return self.kmax

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "kmax": self.kmax, "n_queues": self.n_queues}

    @classmethod
    def from_dict(cls, d: dict) -> "TailVector":
        return validate_tail(d["values"], d.get("n_queues"))


@dataclass(frozen=True)
class WeightSequence:
    kind: str
    values: np.ndarray
    comp_constants: Optional[tuple[float, float]] = None
    theta: Optional[float] = None
    underflow: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.kind not in ("geometric", "potential", "explicit"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if np.any(vals <= 0):
            raise DomainError("weights must be strictly positive")
        if self.comp_constants is not None:
            c, d = self.comp_constants
            lo = c * vals[1:] <= vals[:-1] * (1 + 1e-12)
            hi = vals[:-1] <= d * vals[1:] * (1 + 1e-12)
            if not (np.all(lo) and np.all(hi)):
                raise DomainError(f"comparison constants {self.comp_constants} do not hold")

    @property
    def kmax(self) -> int:
        return len(self.values)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "values": self.values.tolist(),
            "comp_constants": list(self.comp_constants) if self.comp_constants else None,
            "theta": self.theta,
            "underflow": self.underflow,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WeightSequence":
        cc = d.get("comp_constants")
        return cls(
            kind=d["kind"],
            values=np.asarray(d["values"], dtype=float),
            comp_constants=tuple(cc) if cc else None,
            theta=d.get("theta"),
            underflow=bool(d.get("underflow", False)),
        )


@dataclass(frozen=True)
class FluctuationSample:
    times: np.ndarray
    z: np.ndarray  # shape (len(times), kmax)
    n_queues: int
    seed: Optional[int]
    weights: Optional[WeightSequence] = None

    def norms(self) -> np.ndarray:
        if self.weights is None:
            return np.sqrt(np.sum(self.z**2, axis=1))
        return np.array([weighted_l2_norm(row, self.weights) for row in self.z])

    def to_dict(self) -> dict:
        return {
            "times": np.asarray(self.times).tolist(),
            "z": np.asarray(self.z).tolist(),
            "n_queues": self.n_queues,
            "seed": self.seed,
            "weights": self.weights.to_dict() if self.weights is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FluctuationSample":
        w = d.get("weights")
        return cls(
            times=np.asarray(d["times"], dtype=float),
            z=np.asarray(d["z"], dtype=float),
            n_queues=int(d["n_queues"]),
            seed=d.get("seed"),
            weights=WeightSequence.from_dict(w) if w else None,
        )


def make_geometric_weights(theta: float, kmax: int) -> WeightSequence:
    if not (0 < theta <= 1):
        raise DomainError(f"theta must lie in (0, 1], got {theta}", "theta")
    if kmax < 1:
        raise DomainError(f"kmax must be >= 1, got {kmax}", "kmax")
    vals = theta ** np.arange(1, kmax + 1, dtype=float)
    return WeightSequence("geometric", vals, comp_constants=(1 / theta, 1 / theta), theta=theta)


def _as_weights(w) -> np.ndarray:
    return w.values if isinstance(w, WeightSequence) else np.asarray(w, dtype=float)


def _check_len(x: np.ndarray, w: np.ndarray) -> None:
    if len(x) > len(w):
        raise ValueError(f"sequence of length {len(x)} exceeds weight length {len(w)}")


def weighted_l2_norm(x: Sequence[float], w) -> float:
    """Norm of ``x`` in L2(w): ``sqrt(sum x(k)^2 / w(k))``."""
    x = np.asarray(x, dtype=float)
    wv = _as_weights(w)
    _check_len(x, wv)
    return float(np.sqrt(np.sum(x**2 / wv[: len(x)])))


def weighted_l1_norm(x: Sequence[float], w) -> float:
    x = np.asarray(x, dtype=float)
    wv = _as_weights(w)
    _check_len(x, wv)
    return float(np.sum(np.abs(x) / wv[: len(x)]))


def validate_tail(v: Sequence[float], n_queues: Optional[int] = None) -> TailVector:
    """Check that ``v`` is a tail vector, optionally on the lattice (1/N)Z.

    Errors carry the 1-based index of the first offending coordinate.
    """
    vals = np.asarray(v, dtype=float).ravel()
    for k, x in enumerate(vals, start=1):
        if not (0.0 <= x <= 1.0) or math.isnan(x):
            raise TailValidationError(f"entry v({k}) = {x} outside [0, 1]", k)
    for k in range(1, len(vals)):
        if vals[k] > vals[k - 1]:
            raise TailValidationError(
                f"increasing at k={k}->{k + 1}: {vals[k - 1]} < {vals[k]}", k + 1
            )
    if n_queues is not None:
        n_queues = int(n_queues)
        if n_queues < 1:
            raise DomainError("n_queues must be >= 1", "n_queues")
        scaled = vals * n_queues
        # i/N * N carries round-off of order N * eps
        bad = np.abs(scaled - np.round(scaled)) > LATTICE_TOL * n_queues
        if np.any(bad):
            k = int(np.argmax(bad)) + 1
            raise TailValidationError(
                f"entry v({k}) = {vals[k - 1]} is not a multiple of 1/{n_queues}", k
            )
        vals = np.round(scaled) / n_queues
    return TailVector(vals, len(vals), n_queues)
