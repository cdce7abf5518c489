"""Stationary fluctuation covariance from simulation against the Lyapunov solution."""
import argparse
from pathlib import Path

from jsqclt.clt_harness import run_clt_equilibrium
from jsqclt.model import ModelParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha", type=float, default=0.5)
    ap.add_argument("--bigL", type=int, default=2)
    ap.add_argument("--N", type=int, default=10_000)
    ap.add_argument("--replicas", type=int, default=60)
    ap.add_argument("--per-replica", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/clt_equilibrium.json"))
    args = ap.parse_args()

    p = ModelParams(args.alpha, 1.0, args.bigL)
    r = run_clt_equilibrium(p, args.N, args.replicas, args.seed, per_replica=args.per_replica)
    for name, ok in sorted(r.passed.items()):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(r.to_json() + "\n")


if __name__ == "__main__":
    main()
