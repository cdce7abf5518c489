"""Fluctuations around the ODE path at fixed times against the time-dependent OU limit."""
import argparse
from pathlib import Path

from jsqclt.clt_harness import run_clt_transient
from jsqclt.model import ModelParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha", type=float, default=0.5)
    ap.add_argument("--bigL", type=int, default=2)
    ap.add_argument("--N", type=int, default=2000)
    ap.add_argument("--times", type=float, nargs="+", default=[0.0, 1.0, 5.0])
    ap.add_argument("--replicas", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--empty-start", action="store_true", help="start from an empty network")
    ap.add_argument("--out", type=Path, default=Path("results/clt_transient.json"))
    args = ap.parse_args()

    p = ModelParams(args.alpha, 1.0, args.bigL)
    kmax = 10
    u0 = [0.0] * kmax if args.empty_start else None
    r = run_clt_transient(p, args.N, u0, args.times, args.replicas, args.seed, kmax=kmax)
    for name, ok in sorted(r.passed.items()):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(r.to_json() + "\n")


if __name__ == "__main__":
    main()
