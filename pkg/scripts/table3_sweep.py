"""Noise-level sweep: final loss of FedMTL, DPFedMTL and DPFedAvg across sigma.

Runs the bundled sweep preset through the CLI and prints the method x sigma
table of mean final losses.
"""

import argparse
import csv
import sys
from pathlib import Path

from fedmtl.cli import main as cli


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="preset:table3_sweep")
    ap.add_argument("--output-root", default="runs")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)
    code = cli(["sweep", args.config, "--output-root", args.output_root, "--workers", str(args.workers)])
    if code:
        return code
    latest = max(Path(args.output_root).glob("*_sweep_*"), key=lambda p: p.stat().st_mtime)
    with (latest / "summary.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    sigmas = sorted({float(r["sigma"]) for r in rows})
    methods = list(dict.fromkeys(r["method"] for r in rows))
    table = {(r["method"], float(r["sigma"])): float(r["mean_final_loss"]) for r in rows}
    print()
    print("method".ljust(10) + "".join(f"sigma={s:<8g}" for s in sigmas))
    for m in methods:
        print(m.ljust(10) + "".join(f"{table[m, s]:<14.5g}" for s in sigmas))
    return 0


if __name__ == "__main__":
    sys.exit(main())
