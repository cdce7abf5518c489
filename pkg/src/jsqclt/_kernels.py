"""Compiled inner loops for the stochastic simulators.

Status codes returned by the kernels: 0 ok, 1 truncation overflow.
"""
import numpy as np
from numba import njit

OK = 0
OVERFLOW = 1


@njit(cache=True, nogil=True)
def _falling(n, L):
    out = 1.0
    for i in range(L):
        out *= n - i
    return out


@njit(cache=True, nogil=True)
def tail_rates(counts, N, L, alpha, beta, with_replacement, up, down):
    """Fill per-level jump rates of the aggregated chain; return their sum.

    ``counts[k]`` is the number of queues with length >= k for k = 0..kmax+1
    (``counts[0] = N``, ``counts[kmax+1] = 0``).  ``up[k-1]`` is the rate of
    ``counts[k] += 1`` for k = 1..kmax+1; ``down[k-1]`` of ``counts[k] -= 1``.
    """
    kmax = counts.shape[0] - 2
    total = 0.0
    if with_replacement:
        for k in range(1, kmax + 2):
            a = counts[k - 1] / N
            b = counts[k] / N
            up[k - 1] = N * alpha * (a**L - b**L)
            total += up[k - 1]
    else:
        denom = _falling(N, L)
        prev = _falling(counts[0], L)
        for k in range(1, kmax + 2):
            cur = _falling(counts[k], L)
            up[k - 1] = N * alpha * (prev - cur) / denom
            total += up[k - 1]
            prev = cur
    for k in range(1, kmax + 1):
        down[k - 1] = beta * (counts[k] - counts[k + 1])
        total += down[k - 1]
    return total


@njit(cache=True, nogil=True)
def run_tail_chain(counts, N, L, alpha, beta, with_replacement, t0, record_times, out, events_out, rng):
    """Gillespie direct method on the tail counts.

    Records ``counts[1:kmax+1]`` at each of ``record_times`` (all >= t0) and
    the cumulative number of jumps at that time.  ``counts`` is updated in
    place.  Returns ``(status, events)``.
    """
    kmax = counts.shape[0] - 2
    up = np.zeros(kmax + 1)
    down = np.zeros(kmax)
    n_rec = record_times.shape[0]
    rec = 0
    t = t0
    events = 0
    while rec < n_rec:
        total = tail_rates(counts, N, L, alpha, beta, with_replacement, up, down)
        if total <= 0.0:
            t_next = np.inf
        else:
            t_next = t + rng.standard_exponential() / total
        while rec < n_rec and record_times[rec] < t_next:
            for k in range(kmax):
                out[rec, k] = counts[k + 1]
            events_out[rec] = events
            rec += 1
        if rec == n_rec:
            break
        x = rng.random() * total
        acc = 0.0
        chosen = -1
        for k in range(kmax + 1):
            acc += up[k]
            if x < acc:
                chosen = k
                break
        if chosen >= 0:
            if chosen == kmax:
                return OVERFLOW, events
            counts[chosen + 1] += 1
        else:
            chosen = kmax - 1
            for k in range(kmax):
                acc += down[k]
                if x < acc:
                    chosen = k
                    break
            # guard against round-off in the cumulative sum
            while down[chosen] <= 0.0:
                chosen -= 1
            counts[chosen + 1] -= 1
        events += 1
        t = t_next
    return OK, events


@njit(cache=True, nogil=True)
def run_queues(lengths, counts, L, alpha, beta, with_replacement, t0, record_times, out, events_out, rng):
    """Agent-level simulation of N individual queues under join-shortest-of-L.

    ``lengths`` holds per-queue lengths; ``counts`` the matching tail counts
    (same layout as :func:`run_tail_chain`), both updated in place.
    """
    N = lengths.shape[0]
    kmax = counts.shape[0] - 2
    idx = np.arange(N)
    sampled = np.empty(L, dtype=np.int64)
    n_rec = record_times.shape[0]
    rec = 0
    t = t0
    events = 0
    arrival_rate = N * alpha
    while rec < n_rec:
        busy = counts[1]
        total = arrival_rate + beta * busy
        t_next = t + rng.standard_exponential() / total if total > 0 else np.inf
        while rec < n_rec and record_times[rec] < t_next:
            for k in range(kmax):
                out[rec, k] = counts[k + 1]
            events_out[rec] = events
            rec += 1
        if rec == n_rec:
            break
        if rng.random() * total < arrival_rate:
            if with_replacement:
                for j in range(L):
                    sampled[j] = rng.integers(0, N)
            else:
                # partial Fisher-Yates over a persistent permutation
                for j in range(L):
                    r = j + rng.integers(0, N - j)
                    tmp = idx[j]
                    idx[j] = idx[r]
                    idx[r] = tmp
                    sampled[j] = idx[j]
            best = lengths[sampled[0]]
            for j in range(1, L):
                if lengths[sampled[j]] < best:
                    best = lengths[sampled[j]]
            n_tied = 0
            for j in range(L):
                if lengths[sampled[j]] == best:
                    n_tied += 1
            pick = rng.integers(0, n_tied)
            target = -1
            for j in range(L):
                if lengths[sampled[j]] == best:
                    if pick == 0:
                        target = sampled[j]
                        break
                    pick -= 1
            new_len = lengths[target] + 1
            if new_len > kmax:
                return OVERFLOW, events
            lengths[target] = new_len
            counts[new_len] += 1
        else:
            # uniform over busy queues by rejection
            while True:
                q = rng.integers(0, N)
                if lengths[q] > 0:
                    break
            counts[lengths[q]] -= 1
            lengths[q] -= 1
        events += 1
        t = t_next
    return OK, events
