"""Desk-scale operating characteristics for the continuous scenarios.

Scenarios table1-s1..s5, n=500, r=0.5, 200 replicates, all approaches.
Writes metrics.csv, one SVG per metric and a manifest into --out.
"""
import argparse
import sys

from smartlab.cli import main

SCENARIOS = ["table1-s1", "table1-s2", "table1-s3", "table1-s4", "table1-s5"]


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/continuous")
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--approaches", default="all")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=20240601)
    p.add_argument("--resume", action="store_true")
    args = p.parse_args(argv)
    cli = ["run-study", "--n", "500", "--r", "0.5", "--approaches", args.approaches,
           "--replicates", str(args.replicates), "--workers", str(args.workers),
           "--seed", str(args.seed), "--out", args.out]
    for name in SCENARIOS:
        cli += ["--scenario", name]
    return main(cli + (["--resume"] if args.resume else []))


if __name__ == "__main__":
    sys.exit(run())
