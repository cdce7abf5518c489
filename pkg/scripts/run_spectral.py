"""Spectral gap of the stationary operator over a grid of loads and L."""
import argparse
import json
from pathlib import Path

from jsqclt.clt_harness import run_spectral
from jsqclt.model import ModelParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rho", type=float, nargs="+", default=[0.3, 0.5, 0.7, 0.9])
    ap.add_argument("--bigL", type=int, nargs="+", default=[2, 3])
    ap.add_argument("--kmax", type=int, nargs="+", default=[30, 60])
    ap.add_argument("--out", type=Path, default=Path("results/spectral.json"))
    args = ap.parse_args()

    rows = []
    for L in args.bigL:
        for rho in args.rho:
            r = run_spectral(ModelParams(rho, 1.0, L), args.kmax)
            rows.append(r.to_dict())
            print(f"L={L} rho={rho:.2f} gamma_hat={r.metrics['gamma_hat']:.10f} ok={r.ok}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
