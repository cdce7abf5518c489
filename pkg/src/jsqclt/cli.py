"""Command-line front end.

    jsqclt <subcommand> --params p.json --out DIR [--seed S] [--format csv|json]
                        [--n N] [--t-end T] [--dt DT] [--kmax K] [--replicas R]
                        [--theta TH] [--workers W]

Exit codes: 0 success (all criteria pass), 1 a criterion failed, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import clt_harness, linear_ops, meanfield, network_sim, ou_process
from .model import DomainError, ModelParams, TailValidationError, make_geometric_weights, validate_tail

SUBCOMMANDS = ("meanfield", "simulate", "spectrum", "ou", "lln", "clt-transient", "clt-equilibrium", "stability")


class ConfigError(Exception):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


@dataclass
class CliConfig:
    subcommand: str
    params_file: Path
    out_dir: Path
    seed: Optional[int] = None
    format: str = "json"
    n: Optional[int] = None
    t_end: Optional[float] = None
    dt: Optional[float] = None
    kmax: Optional[int] = None
    replicas: Optional[int] = None
    theta: Optional[float] = None
    workers: Optional[int] = None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jsqclt", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--params", required=True, type=Path, help="JSON file with alpha, beta, bigL and options")
        sp.add_argument("--out", default=Path("."), type=Path, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--format", choices=("csv", "json"), default="json")
        sp.add_argument("--n", type=int, default=None, help="number of queues N")
        sp.add_argument("--t-end", type=float, default=None)
        sp.add_argument("--dt", type=float, default=None)
        sp.add_argument("--kmax", type=int, default=None)
        sp.add_argument("--replicas", type=int, default=None)
        sp.add_argument("--theta", type=float, default=None)
        sp.add_argument("--workers", type=int, default=None, help="threads for replicas (default: all cores)")
    return parser


def _load(cfg: CliConfig) -> tuple[ModelParams, dict]:
    try:
        raw = json.loads(cfg.params_file.read_text())
    except FileNotFoundError:
        raise ConfigError("params", f"file not found: {cfg.params_file}")
    except json.JSONDecodeError as e:
        raise ConfigError("params", f"invalid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigError("params", "top-level JSON value must be an object")
    for key in ("alpha", "beta", "bigL"):
        if key not in raw:
            raise ConfigError(key, "missing from params file")
    try:
        p = ModelParams(float(raw["alpha"]), float(raw["beta"]), raw["bigL"])
    except DomainError as e:
        raise ConfigError(e.field_name or "params", str(e))
    except (TypeError, ValueError) as e:
        raise ConfigError("params", str(e))
    return p, raw


def _opt(cfg: CliConfig, raw: dict, flag: str, key: str, default, cast=float):
    v = getattr(cfg, flag)
    if v is None:
        v = raw.get(key, default)
    if v is None:
        return None
    try:
        return cast(v)
    except (TypeError, ValueError):
        raise ConfigError(key, f"cannot interpret {v!r}")


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def _report_out(cfg: CliConfig, report: clt_harness.ExperimentReport, name: str) -> int:
    _write(cfg.out_dir / f"{name}.json", report.to_json() + "\n")
    verdict = "PASS" if report.ok else "FAIL"
    failed = [k for k, v in report.passed.items() if not v]
    print(f"{report.experiment}: {verdict} ({len(report.passed) - len(failed)}/{len(report.passed)} criteria)"
          + (f" failed: {', '.join(failed)}" if failed else ""))
    return 0 if report.ok else 1


def _cmd_meanfield(cfg, p, raw) -> int:
    kmax = _opt(cfg, raw, "kmax", "kmax", 12, int)
    t_end = _opt(cfg, raw, "t_end", "t_end", 50.0)
    dt = _opt(cfg, raw, "dt", "dt", 0.01)
    u0 = raw.get("u0", [0.0] * kmax)
    try:
        u0v = validate_tail(u0)
    except TailValidationError as e:
        raise ConfigError("u0", str(e))
    if u0v.kmax != kmax:
        raise ConfigError("u0", f"length {u0v.kmax} differs from kmax={kmax}")
    traj = meanfield.integrate_ode(u0v, p, t_end, dt, record_every=max(1, int(round(0.1 / dt))))
    if cfg.format == "csv":
        _write(cfg.out_dir / "meanfield_trajectory.csv", traj.to_csv())
    else:
        _write(cfg.out_dir / "meanfield_trajectory.json", json.dumps(
            {"times": traj.times.tolist(), "states": traj.values.tolist(), "step": dt,
             "params": p.to_dict()}, sort_keys=True) + "\n")
    msg = f"meanfield: integrated to t={t_end} with dt={dt}, kmax={kmax}"
    if p.rho < 1:
        theta = _opt(cfg, raw, "theta", "theta", max(p.rho, 0.5))
        window = tuple(raw.get("window", (0.4 * t_end, 0.9 * t_end)))
        fit = meanfield.fit_decay_rate(traj, meanfield.fixed_point(p, kmax), make_geometric_weights(theta, kmax), window)
        _write(cfg.out_dir / "decay_fit.json", fit.to_json() + "\n")
        msg += f", gamma_hat={fit.gamma_hat:.6g}"
    print(msg)
    return 0


def _cmd_simulate(cfg, p, raw) -> int:
    kmax = _opt(cfg, raw, "kmax", "kmax", 12, int)
    n = _opt(cfg, raw, "n", "n_queues", 1000, int)
    t_end = _opt(cfg, raw, "t_end", "t_end", 100.0)
    seed = cfg.seed if cfg.seed is not None else int(raw.get("seed", 0))
    record_dt = float(raw.get("record_dt", 0.1))
    if "u0" in raw:
        init = network_sim.rounded_initial(validate_tail(raw["u0"]), n)
    elif p.rho < 1:
        init = network_sim.rounded_initial(meanfield.fixed_point(p, kmax), n)
    else:
        init = validate_tail([0.0] * kmax, n)
    if init.kmax != kmax:
        raise ConfigError("u0", f"length {init.kmax} differs from kmax={kmax}")
    record = record_dt * np.arange(int(round(t_end / record_dt)) + 1)
    sc = network_sim.SimConfig(p, n, kmax, t_end, seed, record, init,
                               with_replacement=bool(raw.get("with_replacement", False)))
    traj = network_sim.simulate(sc)
    if cfg.format == "csv":
        _write(cfg.out_dir / "sim_trajectory.csv", traj.to_csv())
    summary = traj.summary(t_from=float(raw.get("t_from", 0.0)))
    _write(cfg.out_dir / "sim_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"simulate: N={n} events={traj.event_count} mean R(1)={summary['time_avg_tail'][0]:.6g}")
    return 0


def _cmd_spectrum(cfg, p, raw) -> int:
    if not p.rho < 1:
        raise ConfigError("rho", f"rho = {p.rho} must be < 1 for the stationary operator")
    kmax = _opt(cfg, raw, "kmax", "kmax", 40 if p.bigL >= 2 else 400, int)
    kmax_list = raw.get("kmax_list", [kmax, 2 * kmax])
    est = linear_ops.spectral_gap(p, kmax_list)
    _write(cfg.out_dir / "spectral.json", est.to_json() + "\n")
    _write(cfg.out_dir / "operator.txt", linear_ops.build_stationary_K(p, kmax).coordinate_dump())
    print(f"spectrum: gamma_hat={est.gamma_hat:.10g} richardson_gap={est.richardson_gap:.3g}")
    return 0


def _cmd_ou(cfg, p, raw) -> int:
    if not p.rho < 1:
        raise ConfigError("rho", f"rho = {p.rho} must be < 1 for the stationary OU process")
    kmax = _opt(cfg, raw, "kmax", "kmax", 12, int)
    t_end = _opt(cfg, raw, "t_end", "t_end", 10.0)
    dt = _opt(cfg, raw, "dt", "dt", 0.01)
    seed = cfg.seed if cfg.seed is not None else int(raw.get("seed", 0))
    cov = ou_process.stationary_covariance(p, kmax)
    _write(cfg.out_dir / "covariance.json", cov.to_json() + "\n")
    z0 = ou_process.sample_invariant(p, cov, 1, seed, stream_id=0)[0]
    times, paths = ou_process.simulate_ou(z0, p, t_end, dt, seed, ou_process.noise_variances(p, kmax), stream_id=1)
    if cfg.format == "csv":
        _write(cfg.out_dir / "ou_path.csv", meanfield.trajectory_csv(times, paths[:, 0, :]))
    print(f"ou: Sigma(1,1)={cov.sigma[0, 0]:.6g} residual={cov.residual:.3g}")
    return 0


def _cmd_lln(cfg, p, raw) -> int:
    seed = cfg.seed if cfg.seed is not None else int(raw.get("seed", 0))
    n_seeds = _opt(cfg, raw, "replicas", "replicas", 20, int)
    report = clt_harness.run_lln(
        p,
        raw.get("N_list", [100, 1000, 10000] if cfg.n is None else [cfg.n]),
        _opt(cfg, raw, "t_end", "t_end", 20.0),
        [seed + i for i in range(n_seeds)],
        kmax=_opt(cfg, raw, "kmax", "kmax", 12, int),
        variant=raw.get("variant", "transient"),
        u0=raw.get("u0"),
        dt=_opt(cfg, raw, "dt", "dt", 0.01),
        workers=cfg.workers,
    )
    return _report_out(cfg, report, "lln_report")


def _cmd_clt_transient(cfg, p, raw) -> int:
    report = clt_harness.run_clt_transient(
        p,
        _opt(cfg, raw, "n", "n_queues", 10000, int),
        raw.get("u0"),
        raw.get("t_list", [0.0, 2.0, 5.0]),
        _opt(cfg, raw, "replicas", "replicas", 500, int),
        cfg.seed if cfg.seed is not None else int(raw.get("seed", 0)),
        kmax=_opt(cfg, raw, "kmax", "kmax", 10, int),
        dt=_opt(cfg, raw, "dt", "dt", 0.01),
        workers=cfg.workers,
    )
    return _report_out(cfg, report, "clt_transient_report")


def _cmd_clt_equilibrium(cfg, p, raw) -> int:
    if not p.rho < 1:
        raise ConfigError("rho", f"rho = {p.rho} must be < 1 for an equilibrium")
    replicas = _opt(cfg, raw, "replicas", "replicas", 500, int)
    per_replica = int(raw.get("per_replica", 10))
    report = clt_harness.run_clt_equilibrium(
        p,
        _opt(cfg, raw, "n", "n_queues", 10000, int),
        max(2, -(-replicas // per_replica)),
        cfg.seed if cfg.seed is not None else int(raw.get("seed", 0)),
        per_replica=per_replica,
        kmax=_opt(cfg, raw, "kmax", "kmax", None, int),
        spacing=float(raw.get("spacing", 10.0)),
        workers=cfg.workers,
    )
    return _report_out(cfg, report, "clt_equilibrium_report")


def _cmd_stability(cfg, p, raw) -> int:
    if not p.rho < 1:
        raise ConfigError("rho", f"rho = {p.rho} must be < 1 for a stable point")
    theta = _opt(cfg, raw, "theta", "theta", max(p.rho, 0.5))
    if not p.rho <= theta < 1:
        raise ConfigError("theta", f"theta={theta} must satisfy rho <= theta < 1")
    report = clt_harness.run_stability(
        p, theta, raw.get("perturbations"),
        t_end=_opt(cfg, raw, "t_end", "t_end", 50.0),
        kmax=_opt(cfg, raw, "kmax", "kmax", 12, int),
        dt=_opt(cfg, raw, "dt", "dt", 0.01),
        seed=cfg.seed if cfg.seed is not None else int(raw.get("seed", 0)),
    )
    return _report_out(cfg, report, "stability_report")


_DISPATCH = {
    "meanfield": _cmd_meanfield,
    "simulate": _cmd_simulate,
    "spectrum": _cmd_spectrum,
    "ou": _cmd_ou,
    "lln": _cmd_lln,
    "clt-transient": _cmd_clt_transient,
    "clt-equilibrium": _cmd_clt_equilibrium,
    "stability": _cmd_stability,
}


def dispatch(cfg: CliConfig) -> int:
    try:
        if cfg.seed is not None and not 0 <= cfg.seed < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(cfg.out_dir, os.W_OK):
            raise ConfigError("out", f"directory not writable: {cfg.out_dir}")
        if cfg.workers is None:
            cfg.workers = os.cpu_count() or 1
        p, raw = _load(cfg)
        return _DISPATCH[cfg.subcommand](cfg, p, raw)
    except ConfigError as e:
        print(f"jsqclt {cfg.subcommand}: error: {e}", file=sys.stderr)
        return 2
    except (DomainError, TailValidationError) as e:
        name = getattr(e, "field_name", None) or "params"
        print(f"jsqclt {cfg.subcommand}: error: {name}: {e}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = CliConfig(
        subcommand=args.subcommand, params_file=args.params, out_dir=args.out, seed=args.seed,
        format=args.format, n=args.n, t_end=args.t_end, dt=args.dt, kmax=args.kmax,
        replicas=args.replicas, theta=args.theta, workers=args.workers,
    )
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
