"""Cross-module experiments: law of large numbers, transient and equilibrium
central limit theorems, relaxation rates.

Each ``run_*`` returns an :class:`ExperimentReport` whose ``inputs`` echo is
enough to re-run it (:func:`rerun`) and reproduce the metrics bit for bit.
Statistical criteria use "relative tolerance + 3 Monte-Carlo standard errors".
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.linalg import expm

from . import linear_ops, meanfield, network_sim, ou_process
from .model import ModelParams, make_geometric_weights, validate_tail, weighted_l2_norm

EXPERIMENTS = (
    "lln_transient",
    "lln_equilibrium",
    "clt_transient",
    "clt_equilibrium",
    "stability_decay",
    "spectral",
)


@dataclass
class ExperimentReport:
    experiment: str
    inputs: dict
    metrics: dict = field(default_factory=dict)
    passed: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def check(self, name: str, ok: bool, **metrics) -> None:
        self.metrics.update(metrics)
        self.passed[name] = bool(ok)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "inputs": self.inputs,
            "metrics": _jsonable(self.metrics),
            "pass": self.passed,
            "seeds": list(self.seeds),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def within(est: float, target: float, se: float, rel: float, n_se: float = 3.0) -> bool:
    return abs(est - target) <= rel * abs(target) + n_se * se


def moment_stats(z: np.ndarray, groups: np.ndarray, i: int, j: int) -> tuple[float, float]:
    """Sample covariance of columns ``i, j`` and its standard error.

    The error is computed from per-group means of the centred products, so
    correlation inside a group (one replica's snapshots) is accounted for.
    """
    zc = z - z.mean(axis=0)
    prod = zc[:, i] * zc[:, j]
    est = float(prod.mean())
    labels = np.unique(groups)
    if len(labels) >= 2:
        gm = np.array([prod[groups == g].mean() for g in labels])
        se = float(gm.std(ddof=1) / math.sqrt(len(labels)))
    else:
        se = float(prod.std(ddof=1) / math.sqrt(len(prod)))
    return est, se


def _mean_stats(z: np.ndarray, groups: np.ndarray, i: int) -> tuple[float, float]:
    labels = np.unique(groups)
    if len(labels) >= 2:
        gm = np.array([z[groups == g, i].mean() for g in labels])
        return float(z[:, i].mean()), float(gm.std(ddof=1) / math.sqrt(len(labels)))
    return float(z[:, i].mean()), float(z[:, i].std(ddof=1) / math.sqrt(len(z)))


# --- law of large numbers --------------------------------------------------

def run_lln(
    p: ModelParams,
    N_list: Sequence[int],
    t_end: float,
    seeds: Sequence[int],
    kmax: int = 12,
    variant: str = "transient",
    u0: Optional[Sequence[float]] = None,
    dt: float = 0.01,
    record_dt: float = 0.1,
    burn_in: Optional[float] = None,
    workers: Optional[int] = None,
) -> ExperimentReport:
    """Sup-norm distance between the N-queue tail process and its limit.

    ``transient``: start at the rounding of ``u0`` (default the fixed point)
    and compare with the ODE from ``u0``.  ``equilibrium``: discard
    ``burn_in`` and compare snapshots with the fixed point.
    """
    if variant not in ("transient", "equilibrium"):
        raise ValueError(f"unknown LLN variant {variant!r}")
    equilibrium = variant == "equilibrium"
    if equilibrium or u0 is None:
        p.require_stable()
    u_start = meanfield.fixed_point(p, kmax).values if u0 is None else np.asarray(u0, dtype=float)
    inputs = {
        "params": p.to_dict(), "N_list": [int(n) for n in N_list], "t_end": t_end,
        "seeds": [int(s) for s in seeds], "kmax": kmax, "variant": variant,
        "u0": None if u0 is None else list(map(float, u0)), "dt": dt, "record_dt": record_dt,
        "burn_in": burn_in,
    }
    report = ExperimentReport("lln_equilibrium" if equilibrium else "lln_transient", inputs, seeds=list(seeds))
    if equilibrium:
        b = network_sim.default_burn_in(p) if burn_in is None else burn_in
        record = b + record_dt * np.arange(int(round((t_end - b) / record_dt)) + 1)
        target = lambda t: meanfield.fixed_point(p, kmax).values
    else:
        record = record_dt * np.arange(int(round(t_end / record_dt)) + 1)
        traj = meanfield.integrate_ode(validate_tail(u_start), p, t_end, dt)
        target = traj.at

    ref = np.array([target(t) for t in record])
    medians, all_gaps = [], {}
    for N in N_list:
        init = network_sim.rounded_initial(u_start, N)

        def one(i, N=N, init=init):
            cfg = network_sim.SimConfig(p, N, kmax, float(record[-1]), int(seeds[i]), record, init)
            tr = network_sim.simulate(cfg)
            return float(np.max(np.abs(tr.values - ref)))

        gaps = network_sim.run_replicas(one, len(seeds), workers)
        all_gaps[int(N)] = gaps
        medians.append(float(np.median(gaps)))
    decreasing = all(b < a for a, b in zip(medians, medians[1:]))
    report.check("median_gap_decreasing", decreasing, median_gap=medians, gaps=all_gaps)
    n_last = int(N_list[-1])
    bound = 5.0 / math.sqrt(n_last)
    report.check("largest_N_below_5_over_sqrtN", medians[-1] < bound, bound_largest_N=bound)
    return report


# --- transient CLT ---------------------------------------------------------

def run_clt_transient(
    p: ModelParams,
    N: int,
    u0: Optional[Sequence[float]],
    t_list: Sequence[float],
    replicas: int,
    seed: int,
    kmax: int = 10,
    dt: float = 0.01,
    coords: Sequence[int] = (1, 2, 3),
    var_rel_tol: float = 0.15,
    workers: Optional[int] = None,
) -> ExperimentReport:
    """Moments of ``sqrt(N)(R^N_t - u_t)`` against the inhomogeneous OU limit."""
    u_start = meanfield.fixed_point(p, kmax).values if u0 is None else np.asarray(u0, dtype=float)
    t_list = sorted(float(t) for t in t_list)
    inputs = {
        "params": p.to_dict(), "N": int(N), "u0": None if u0 is None else list(map(float, u0)),
        "t_list": t_list, "replicas": int(replicas), "seed": int(seed), "kmax": kmax, "dt": dt,
        "coords": list(coords), "var_rel_tol": var_rel_tol,
    }
    report = ExperimentReport("clt_transient", inputs, seeds=[int(seed)])
    t_end = max(t_list)
    t_end = dt * math.ceil(t_end / dt - 1e-9) if t_end > 0 else dt
    u = meanfield.integrate_ode(validate_tail(u_start), p, t_end, dt)
    init = network_sim.rounded_initial(u_start, N)
    z0 = math.sqrt(N) * (init.values - u_start)
    record = np.array(t_list)

    def one(i):
        cfg = network_sim.SimConfig(p, N, kmax, float(record[-1]), int(seed), record, init, stream_id=i)
        tr = network_sim.simulate(cfg)
        return network_sim.fluctuations(tr, u).z

    zs = np.array(network_sim.run_replicas(one, replicas, workers))  # (replicas, times, kmax)
    t_pos = [t for t in t_list if t > 0]
    means, covs = ou_process.scheduled_moments(p, u, z0, t_pos, dt) if t_pos else (np.zeros((0, kmax)), None)
    groups = np.arange(replicas)
    n_tests = 2 * len(t_pos)
    for ti, t in enumerate(t_list):
        z = zs[:, ti, :]
        if t == 0:
            bound = math.sqrt(N) / (2 * N)
            report.check("t0_rounding_bound", float(np.abs(z).max()) <= bound + 1e-12,
                         **{"t0_max_abs": float(np.abs(z).max())})
            continue
        pi = t_pos.index(t)
        for k in coords:
            i = k - 1
            m, m_se = _mean_stats(z, groups, i)
            report.check(f"mean_t{t:g}_k{k}", abs(m - means[pi, i]) <= 4 * m_se + 1e-12,
                         **{f"mean_t{t:g}_k{k}": m, f"mean_pred_t{t:g}_k{k}": float(means[pi, i]),
                            f"mean_se_t{t:g}_k{k}": m_se})
            v, v_se = moment_stats(z, groups, i, i)
            target = float(covs[pi, i, i])
            report.check(f"var_t{t:g}_k{k}", within(v, target, v_se, var_rel_tol),
                         **{f"var_t{t:g}_k{k}": v, f"var_pred_t{t:g}_k{k}": target, f"var_se_t{t:g}_k{k}": v_se})
        for k in (1, 2):
            pval = float(stats.normaltest(z[:, k - 1]).pvalue)
            report.check(f"normal_t{t:g}_k{k}", pval > 0.01 / n_tests, **{f"normal_p_t{t:g}_k{k}": pval})
    return report


# --- equilibrium CLT -------------------------------------------------------

def equilibrium_fluctuations(
    p: ModelParams,
    N: int,
    replicas: int,
    per_replica: int,
    seed: int,
    kmax: int,
    spacing: float,
    lag: float,
    burn_in: Optional[float] = None,
    workers: Optional[int] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Equilibrium snapshots of ``sqrt(N)(R^N - u)`` and their lagged partners.

    Returns ``(z, z_lag, groups)`` with ``z[i]`` at time ``s_i`` and
    ``z_lag[i]`` at ``s_i + lag`` from the same run; ``groups`` is the replica
    (stream) index of each row.
    """
    utilde = meanfield.fixed_point(p, kmax).values
    b = network_sim.default_burn_in(p) if burn_in is None else burn_in
    base = b + spacing * np.arange(per_replica)
    record = np.sort(np.concatenate((base, base + lag)))
    init = network_sim.rounded_initial(utilde, N)

    def one(i):
        cfg = network_sim.SimConfig(p, N, kmax, float(record[-1]), int(seed), record, init, stream_id=i)
        tr = network_sim.simulate(cfg)
        z = math.sqrt(N) * (tr.values - utilde)
        idx0 = np.searchsorted(record, base)
        idx1 = np.searchsorted(record, base + lag)
        return z[idx0], z[idx1]

    out = network_sim.run_replicas(one, replicas, workers)
    z = np.concatenate([a for a, _ in out])
    z_lag = np.concatenate([b for _, b in out])
    groups = np.repeat(np.arange(replicas), per_replica)
    return z, z_lag, groups


def run_clt_equilibrium(
    p: ModelParams,
    N: int,
    replicas: int,
    seed: int,
    per_replica: int = 10,
    kmax: Optional[int] = None,
    spacing: float = 10.0,
    lag: float = 1.0,
    coords: Sequence[int] = (1, 2, 3),
    rel_tol: float = 0.15,
    lag_rel_tol: float = 0.20,
    burn_in: Optional[float] = None,
    workers: Optional[int] = None,
) -> ExperimentReport:
    """Equilibrium fluctuations against the stationary OU covariance.

    Runs ``replicas`` independent streams, each contributing ``per_replica``
    snapshots; covariance entries for ``coords`` are compared with the Lyapunov
    solution, the lag-``lag`` autocovariance of coordinate 1 with
    ``exp(K lag) Sigma``, and for L = 1 the variances with the exact
    independent-queue value ``rho^k (1 - rho^k)``.
    """
    p.require_stable()
    if kmax is None:
        kmax = 12 if p.bigL >= 2 else 40
    inputs = {
        "params": p.to_dict(), "N": int(N), "replicas": int(replicas), "seed": int(seed),
        "per_replica": per_replica, "kmax": kmax, "spacing": spacing, "lag": lag,
        "coords": list(coords), "rel_tol": rel_tol, "lag_rel_tol": lag_rel_tol, "burn_in": burn_in,
    }
    report = ExperimentReport("clt_equilibrium", inputs, seeds=[int(seed)])
    # covariance from a deeper truncation so the compared block is converged
    k_cov = max(kmax, 40 if p.bigL >= 2 else 80)
    cov = ou_process.stationary_covariance(p, k_cov)
    Sigma = cov.sigma
    z, z_lag, groups = equilibrium_fluctuations(
        p, N, replicas, per_replica, seed, kmax, spacing, lag, burn_in, workers
    )
    report.metrics["n_snapshots"] = int(len(z))
    report.metrics["lyapunov_residual"] = cov.residual
    for a in coords:
        for b in coords:
            if b < a:
                continue
            est, se = moment_stats(z, groups, a - 1, b - 1)
            target = float(Sigma[a - 1, b - 1])
            report.check(f"cov_{a}{b}", within(est, target, se, rel_tol),
                         **{f"cov_{a}{b}": est, f"sigma_{a}{b}": target, f"cov_se_{a}{b}": se})
    if p.bigL == 1:
        rho = p.rho
        for k in coords:
            exact = rho**k * (1 - rho**k)
            est, se = moment_stats(z, groups, k - 1, k - 1)
            report.check(f"iid_var_{k}", within(est, exact, se, rel_tol) and abs(Sigma[k - 1, k - 1] - exact) < 1e-6,
                         **{f"iid_var_exact_{k}": exact})
    # lagged autocovariance E[Z_{s+lag}(1) Z_s(1)]
    K = linear_ops.build_stationary_K(p, k_cov).dense()
    lag_target = float((expm(K * lag) @ Sigma)[0, 0])
    zc0 = z[:, 0] - z[:, 0].mean()
    zc1 = z_lag[:, 0] - z_lag[:, 0].mean()
    prod = zc0 * zc1
    gm = np.array([prod[groups == g].mean() for g in np.unique(groups)])
    lag_se = float(gm.std(ddof=1) / math.sqrt(len(gm))) if len(gm) > 1 else float(prod.std(ddof=1) / math.sqrt(len(prod)))
    report.check("autocov_lag_11", within(float(prod.mean()), lag_target, lag_se, lag_rel_tol),
                 autocov_lag_11=float(prod.mean()), autocov_lag_11_pred=lag_target, autocov_lag_11_se=lag_se)
    n_norm = min(2, len(coords))
    for k in list(coords)[:n_norm]:
        pval = float(stats.normaltest(z[:, k - 1]).pvalue)
        report.check(f"normal_k{k}", pval > 0.01 / n_norm, **{f"normal_p_k{k}": pval})
    return report


# --- relaxation ------------------------------------------------------------

def perturbation_battery(p: ModelParams, kmax: int) -> dict[str, np.ndarray]:
    """Initial conditions for the stability study (all valid tail vectors)."""
    u = meanfield.fixed_point(p, kmax).values
    e = np.eye(kmax)
    large = np.zeros(kmax)
    large[: min(3, kmax)] = 1.0
    minus = u.copy()
    minus[0] = max(u[0] - 0.1, u[1] if kmax > 1 else 0.0)
    mixed = np.minimum(u + 0.1 * e[0], 1.0)
    if kmax > 1:
        mixed[1] = 0.5 * u[1]
    return {
        "zero": u.copy(),
        "plus": np.minimum(u + 0.1 * e[0], 1.0),
        "minus": minus,
        "mixed": mixed,
        "large": large,
    }


def run_stability(
    p: ModelParams,
    theta: float,
    perturbations: Optional[Sequence[str]] = None,
    t_end: float = 50.0,
    kmax: int = 12,
    dt: float = 0.01,
    window: Optional[tuple[float, float]] = None,
    max_residual: float = 0.05,
    seed: int = 0,
) -> ExperimentReport:
    """Relaxation to the fixed point in L2(g_theta), nonlinear and linear.

    The linear flow is started from random vectors (``seed``) and its decay in
    L2(pi) is compared with the spectral gap of the same truncation.
    """
    p.require_stable()
    battery = perturbation_battery(p, kmax)
    names = list(battery) if perturbations is None else list(perturbations)
    window = (0.4 * t_end, 0.9 * t_end) if window is None else tuple(window)
    inputs = {
        "params": p.to_dict(), "theta": theta, "perturbations": names, "t_end": t_end,
        "kmax": kmax, "dt": dt, "window": list(window), "max_residual": max_residual, "seed": seed,
    }
    report = ExperimentReport("stability_decay", inputs, seeds=[int(seed)])
    utilde = meanfield.fixed_point(p, kmax)
    w = make_geometric_weights(theta, kmax)
    for name in names:
        traj = meanfield.integrate_ode(validate_tail(battery[name]), p, t_end, dt)
        fit = meanfield.fit_decay_rate(traj, utilde, w, window)
        if fit.degenerate:
            report.metrics[f"{name}_degenerate"] = True
            continue
        report.check(f"{name}_decays", fit.gamma_hat > 0 and fit.residual < max_residual,
                     **{f"{name}_gamma_hat": fit.gamma_hat, f"{name}_c_hat": fit.c_hat,
                        f"{name}_residual": fit.residual})

    gap = linear_ops.spectral_gap(p, [kmax, 2 * kmax]) if p.bigL >= 2 else linear_ops.spectral_gap(p, [kmax])
    gamma_trunc = linear_ops._smallest_eig(p, kmax)[0]
    op = linear_ops.build_stationary_K(p, kmax)
    pi = linear_ops.potential_coefficients(p, kmax)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    z0 = rng.standard_normal(kmax) * np.sqrt(pi.values)
    ts = np.linspace(window[0], window[1], 41)
    norms = np.array([weighted_l2_norm(linear_ops.semigroup_apply(op, t, z0, "expm"), pi) for t in ts])
    slope = float(np.polyfit(ts, np.log(norms), 1)[0])
    rate = -slope
    report.check(
        "linear_rate_vs_gap",
        rate >= gamma_trunc - 1e-3 and rate <= 1.2 * gamma_trunc,
        linear_rate=rate, spectral_gap=gap.gamma_hat, spectral_gap_truncation=gamma_trunc,
    )
    return report


def run_spectral(p: ModelParams, kmax_list: Sequence[int]) -> ExperimentReport:
    est = linear_ops.spectral_gap(p, kmax_list)
    inputs = {"params": p.to_dict(), "kmax_list": list(kmax_list)}
    report = ExperimentReport("spectral", inputs)
    report.check("gap_in_range", 0 < est.gamma_hat <= p.beta + 1e-9, **{
        "gamma_hat": est.gamma_hat, "richardson_gap": est.richardson_gap, "gammas": est.gammas,
        "sigma_proxy": est.sigma_proxy})
    report.check("converged", est.converged)
    return report


def rerun(report: ExperimentReport | dict, workers: Optional[int] = None) -> ExperimentReport:
    """Re-run an experiment from its echoed inputs."""
    d = report.to_dict() if isinstance(report, ExperimentReport) else report
    x = dict(d["inputs"])
    pd = x.pop("params")
    p = ModelParams.pure_death(pd["beta"], pd["bigL"]) if pd["alpha"] == 0 else ModelParams.from_dict(pd)
    exp = d["experiment"]
    if exp in ("lln_transient", "lln_equilibrium"):
        return run_lln(p, workers=workers, **x)
    if exp == "clt_transient":
        return run_clt_transient(p, workers=workers, **x)
    if exp == "clt_equilibrium":
        return run_clt_equilibrium(p, workers=workers, **x)
    if exp == "stability_decay":
        x["window"] = tuple(x["window"])
        return run_stability(p, **x)
    if exp == "spectral":
        return run_spectral(p, **x)
    raise ValueError(f"unknown experiment {exp!r}")
