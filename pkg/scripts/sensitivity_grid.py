"""Sample-size and cohort-fraction sensitivity grid.

n in {500, 1000, 1500} x r in {0.3, 0.5, 0.7} for one scenario (default
table1-s4, the time-effect scenario). The default replicate count is
reduced to keep the grid at desk scale; raise it with --replicates.
"""
import argparse
import sys

from smartlab.cli import main


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenario", default="table1-s4")
    p.add_argument("--out", default="runs/sensitivity")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--approaches", default="all")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=20240603)
    p.add_argument("--resume", action="store_true")
    args = p.parse_args(argv)
    cli = ["run-study", "--scenario", args.scenario, "--n", "500,1000,1500", "--r", "0.3,0.5,0.7",
           "--approaches", args.approaches, "--replicates", str(args.replicates),
           "--workers", str(args.workers), "--seed", str(args.seed), "--out", args.out]
    return main(cli + (["--resume"] if args.resume else []))


if __name__ == "__main__":
    sys.exit(run())
