"""Exact simulation of the N-queue join-shortest-of-L network.

The default engine runs the tail-count chain directly (state size ``kmax``,
not ``N``); :func:`simulate_per_queue` runs individual queues and is kept as
an independent check of the aggregated rates.
"""
from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .meanfield import MeanFieldTrajectory, trajectory_csv
from .model import (
    DomainError,
    FluctuationSample,
    ModelParams,
    TailVector,
    WeightSequence,
    validate_tail,
)
from .rng import stream


class TruncationOverflow(RuntimeError):
    """A queue would exceed length ``kmax``; rerun with a larger truncation."""


@dataclass(frozen=True)
class SimConfig:
    params: ModelParams
    n_queues: int
    kmax: int
    t_end: float
    seed: int
    record_times: np.ndarray
    init: TailVector
    with_replacement: bool = False
    alpha_override: Optional[float] = None  # e.g. 0.0 for a pure-death run
    stream_id: int = 0

    def __post_init__(self):
        if self.n_queues < self.params.bigL:
            raise DomainError(f"n_queues={self.n_queues} must be >= L={self.params.bigL}", "n_queues")
        rt = np.asarray(self.record_times, dtype=float)
        object.__setattr__(self, "record_times", rt)
        if len(rt) and (rt.min() < 0 or rt.max() > self.t_end + 1e-12):
            raise DomainError("record_times must lie in [0, t_end]", "record_times")
        if len(rt) > 1 and np.any(np.diff(rt) < 0):
            raise DomainError("record_times must be nondecreasing", "record_times")
        if self.init.kmax != self.kmax:
            raise DomainError("init truncation differs from kmax", "init")
        validate_tail(self.init.values, self.n_queues)

    @property
    def alpha(self) -> float:
        return self.params.alpha if self.alpha_override is None else float(self.alpha_override)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "n_queues": self.n_queues,
            "kmax": self.kmax,
            "t_end": self.t_end,
            "seed": self.seed,
            "record_times": self.record_times.tolist(),
            "init": self.init.values.tolist(),
            "with_replacement": self.with_replacement,
            "alpha_override": self.alpha_override,
            "stream_id": self.stream_id,
        }


@dataclass(frozen=True)
class SimTrajectory:
    times: np.ndarray
    values: np.ndarray   # (len(times), kmax), multiples of 1/N
    event_count: int
    seed: int
    n_queues: int
    events_at: np.ndarray = field(default=None)  # cumulative jumps at each record time

    @property
    def kmax(self) -> int:
        return self.values.shape[1]

    @property
    def states(self) -> list[TailVector]:
        return [TailVector(row, self.kmax, self.n_queues) for row in self.values]

    def to_csv(self) -> str:
        return trajectory_csv(self.times, self.values)

    def summary(self, t_from: float = 0.0, n_batches: int = 20) -> dict:
        """Time-averaged tail and batch-means standard errors over ``t >= t_from``."""
        mask = self.times >= t_from
        vals = self.values[mask]
        mean = vals.mean(axis=0) if len(vals) else np.full(self.kmax, np.nan)
        se = batch_means_se(vals, n_batches)
        return {
            "n_queues": self.n_queues,
            "seed": self.seed,
            "event_count": int(self.event_count),
            "time_avg_tail": mean.tolist(),
            "stderr": se.tolist(),
        }

    def summary_json(self, **kw) -> str:
        return json.dumps(self.summary(**kw), indent=2, sort_keys=True)


@dataclass(frozen=True)
class EquilibriumBatch:
    snapshots: np.ndarray  # (n_samples, kmax)
    burn_in: float
    spacing: float
    seed: int
    n_queues: int
    times: np.ndarray = field(default=None)

    @property
    def states(self) -> list[TailVector]:
        return [TailVector(row, len(row), self.n_queues) for row in self.snapshots]


def batch_means_se(x: np.ndarray, n_batches: int = 20) -> np.ndarray:
    """Standard error of the mean of a correlated series via batch means."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    b = min(n_batches, n)
    if b < 2:
        return np.full(x.shape[1], np.nan)
    m = n // b
    means = x[: b * m].reshape(b, m, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(b)


def _counts_from_tail(init: TailVector, n_queues: int) -> np.ndarray:
    counts = np.zeros(init.kmax + 2, dtype=np.int64)
    counts[0] = n_queues
    counts[1:-1] = np.round(np.asarray(init.values) * n_queues).astype(np.int64)
    return counts


def lengths_from_tail(init: TailVector, n_queues: int) -> np.ndarray:
    """Queue lengths realizing the tail counts, longest queues first."""
    counts = _counts_from_tail(init, n_queues)[1:-1]
    i = np.arange(n_queues)
    return (counts[None, :] > i[:, None]).sum(axis=1).astype(np.int64)


def _run(cfg: SimConfig, per_queue: bool) -> SimTrajectory:
    rng = stream(cfg.seed, cfg.stream_id)
    counts = _counts_from_tail(cfg.init, cfg.n_queues)
    n_rec = len(cfg.record_times)
    out = np.zeros((n_rec, cfg.kmax), dtype=np.int64)
    ev = np.zeros(n_rec, dtype=np.int64)
    p = cfg.params
    if per_queue:
        lengths = lengths_from_tail(cfg.init, cfg.n_queues)
        status, events = _kernels.run_queues(
            lengths, counts, p.bigL, cfg.alpha, p.beta, cfg.with_replacement,
            0.0, cfg.record_times, out, ev, rng,
        )
    else:
        status, events = _kernels.run_tail_chain(
            counts, cfg.n_queues, p.bigL, cfg.alpha, p.beta, cfg.with_replacement,
            0.0, cfg.record_times, out, ev, rng,
        )
    if status == _kernels.OVERFLOW:
        raise TruncationOverflow(
            f"a queue exceeded kmax={cfg.kmax} (N={cfg.n_queues}, seed={cfg.seed}); increase kmax"
        )
    return SimTrajectory(
        times=cfg.record_times.copy(),
        values=out / cfg.n_queues,
        event_count=int(events),
        seed=cfg.seed,
        n_queues=cfg.n_queues,
        events_at=ev,
    )


def simulate(cfg: SimConfig) -> SimTrajectory:
    """Gillespie simulation of the tail-count chain.

    From state r, level k moves up by 1/N at rate ``N F^N_+(r)(k)`` and down at
    rate ``N F_-(r)(k)``; the trajectory is a deterministic function of
    ``(seed, stream_id)``.
    """
    return _run(cfg, per_queue=False)


def simulate_per_queue(cfg: SimConfig) -> SimTrajectory:
    """Simulate individual queues and return the induced tail trajectory.

    Arrivals at total rate ``N alpha`` sample L distinct queues uniformly
    (or with replacement when configured) and join a shortest sampled queue,
    ties broken uniformly among the sampled ones.
    """
    return _run(cfg, per_queue=True)


def default_burn_in(p: ModelParams) -> float:
    return 20.0 / ((1.0 - p.rho) * p.beta)


def sample_equilibrium(
    cfg: SimConfig, burn_in: Optional[float], n_samples: int, spacing: float
) -> EquilibriumBatch:
    """Snapshots at ``burn_in + j * spacing`` for ``j < n_samples``.

    ``cfg.record_times`` and ``cfg.t_end`` are replaced by this grid.
    """
    p = cfg.params
    p.require_stable()
    if not spacing > 0:
        raise DomainError("spacing must be > 0", "spacing")
    if burn_in is None:
        burn_in = default_burn_in(p)
    if burn_in < 10.0 / p.beta:
        warnings.warn(f"burn_in={burn_in} below heuristic mixing floor 10/beta", RuntimeWarning, stacklevel=2)
    if n_samples == 0:
        return EquilibriumBatch(np.zeros((0, cfg.kmax)), burn_in, spacing, cfg.seed, cfg.n_queues, np.zeros(0))
    times = burn_in + spacing * np.arange(n_samples)
    run_cfg = replace(cfg, record_times=times, t_end=float(times[-1]))
    traj = simulate(run_cfg)
    return EquilibriumBatch(traj.values, burn_in, spacing, cfg.seed, cfg.n_queues, times)


def fluctuations(
    traj: SimTrajectory, u: MeanFieldTrajectory, weights: Optional[WeightSequence] = None
) -> FluctuationSample:
    """Rescaled deviations ``sqrt(N) (R^N_t - u_t)`` at the recorded times.

    ``u`` is linearly interpolated when a recorded time is within one ODE step
    of its grid; farther mismatches raise.
    """
    n = traj.n_queues
    if traj.kmax != u.kmax:
        raise ValueError(f"truncation mismatch: simulation kmax={traj.kmax}, ODE kmax={u.kmax}")
    ref = np.array([u.at(t, tol=u.step) for t in traj.times])
    z = math.sqrt(n) * (traj.values - ref)
    return FluctuationSample(traj.times.copy(), z, n, traj.seed, weights)


def rounded_initial(utilde, n_queues: int) -> TailVector:
    """Nearest lattice point: ``i/N`` with ``-1/(2N) < u(k) - i/N <= 1/(2N)``."""
    if n_queues < 1:
        raise DomainError("n_queues must be >= 1", "n_queues")
    vals = utilde.values if isinstance(utilde, TailVector) else np.asarray(utilde, dtype=float)
    i = np.ceil(n_queues * vals - 0.5)
    i = np.clip(i, 0, n_queues)
    return validate_tail(i / n_queues, n_queues)


def aggregate_birth_rates_exact(lengths: Sequence[int], bigL: int, alpha) -> dict[int, Fraction]:
    """Rate at which tail level k gains a queue, by enumerating all L-subsets.

    Each subset of L distinct queues is chosen with probability ``1/C(N, L)``;
    the arrival joins one of its shortest members, raising that queue's length
    ``m`` to ``m + 1`` (tail level ``m + 1``).  Returns exact rationals.
    """
    N = len(lengths)
    subsets = list(combinations(range(N), bigL))
    alpha = Fraction(alpha)
    rates: dict[int, Fraction] = {}
    for s in subsets:
        m = min(lengths[i] for i in s)
        rates[m + 1] = rates.get(m + 1, Fraction(0)) + N * alpha / len(subsets)
    return rates


def run_replicas(fn: Callable[[int], object], n: int, workers: Optional[int] = None) -> list:
    """Evaluate ``fn(stream_id)`` for ``stream_id < n``; output ordered by stream id.

    The simulation kernels release the GIL, so threads give real parallelism.
    """
    if workers is None or workers <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(n)))
