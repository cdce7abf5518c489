"""Relaxation of perturbed ODE solutions compared with the linear decay rate."""
import argparse
from pathlib import Path

from jsqclt.clt_harness import run_stability
from jsqclt.model import ModelParams

FAMILIES = ("plus", "minus", "mixed", "large")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha", type=float, default=0.5)
    ap.add_argument("--bigL", type=int, default=2)
    ap.add_argument("--theta", type=float, default=0.5)
    ap.add_argument("--t-end", type=float, default=50.0)
    ap.add_argument("--out", type=Path, default=Path("results/stability.json"))
    args = ap.parse_args()

    p = ModelParams(args.alpha, 1.0, args.bigL)
    r = run_stability(p, args.theta, list(FAMILIES), t_end=args.t_end)
    for f in FAMILIES:
        print(f"{f:>6s} gamma_hat={r.metrics[f'{f}_gamma_hat']:.4f} residual={r.metrics[f'{f}_residual']:.3f}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(r.to_json() + "\n")


if __name__ == "__main__":
    main()
