"""Binary-outcome (mortality) study on the SNAP-like scenarios.

Scenarios table2-s1..s3, n=2000, r=0.5, all approaches. Lower outcome is
better in these scenarios, so prob_optimal uses minimization.
"""
import argparse
import sys

from smartlab.cli import main

SCENARIOS = ["table2-s1", "table2-s2", "table2-s3"]


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/snap")
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--approaches", default="all")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=20240602)
    p.add_argument("--resume", action="store_true")
    args = p.parse_args(argv)
    cli = ["run-study", "--n", "2000", "--r", "0.5", "--approaches", args.approaches,
           "--replicates", str(args.replicates), "--workers", str(args.workers),
           "--seed", str(args.seed), "--out", args.out]
    for name in SCENARIOS:
        cli += ["--scenario", name]
    return main(cli + (["--resume"] if args.resume else []))


if __name__ == "__main__":
    sys.exit(run())
