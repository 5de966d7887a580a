"""Run the convergence checks on the bundled theory presets and print a summary.

Use --replicas to trade accuracy for speed; the presets use 100.
"""

import argparse
import dataclasses
import sys

from fedmtl.config import load_config
from fedmtl.theory import run_verification

PRESETS = ["strongly_convex", "sc_noiseless", "convex_logistic", "nonconvex"]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("presets", nargs="*", default=PRESETS)
    ap.add_argument("--replicas", type=int)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)

    failed = False
    for name in args.presets:
        plan = load_config(f"preset:{name}").verify_plan()
        if args.replicas:
            plan = dataclasses.replace(plan, replicas=args.replicas)
        report = run_verification(plan, args.workers)
        print(f"== {name}: {'passed' if report.passed else 'FAILED'}")
        for check, bound, observed, margin, status in report.summary_rows():
            print(f"  {check:<28} bound={bound:<12.4g} observed={observed:<12.4g} margin={margin:<12.4g} {status}")
        failed |= not report.passed
    return 4 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
