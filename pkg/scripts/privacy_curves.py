"""Privacy of the released models for several noise multipliers.

For each sigma prints mu under the CLT composition and a few (eps, delta)
pairs, and writes the composed trade-off curves as CSV and SVG.
"""

import argparse
import sys
from pathlib import Path

from fedmtl import accountant


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigmas", type=float, nargs="+", default=[0.65, 2.42, 9.69])
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--m", type=int, default=174)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--epsilons", type=float, nargs="+", default=[0.5, 1.0, 2.0, 8.0])
    ap.add_argument("--out", default="privacy_curves")
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    p = args.k / args.m
    print(f"sampling rate p = {p:.6g}, steps T = {args.steps}")
    for sigma in args.sigmas:
        budget = accountant.compose_clt(p, args.steps, sigma)
        pairs = accountant.delta_table(budget, args.epsilons)
        print(f"sigma={sigma:g}  mu={budget.mu:.6g}  " + "  ".join(f"d({e:g})={d:.3g}" for e, d in pairs))
        curve = budget.curve()
        accountant.emit_curve(curve, out / f"tradeoff_sigma{sigma:g}.csv")
        accountant.emit_curve(curve, out / f"tradeoff_sigma{sigma:g}.svg", label=f"sigma={sigma:g}, mu={budget.mu:.4g}")
    print(f"curves written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
