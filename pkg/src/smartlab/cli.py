"""Command-line interface: simulate, estimate, run-study, scenarios, print-schema.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 5 partial completion.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .approaches import APPROACHES, analyze, parse_approaches
from .big import SamplerConfig
from .datagen import read_csv, simulate_trial, to_csv
from .errors import ConfigError, DataError, SmartlabError
from .harness import StudyConfig, atomic_write, run_study
from .ipw import POOL_WEIGHTS, format_rows
from .scenarios import (BUILTIN, SCHEMA, flatten, get_scenario, load_scenario_design, load_toml,
                        scenario_from_flat, scenario_to_flat)
from .svg import PLOT_METRICS, metric_svg
from .trial import Cohort, Dtr, TrialDesign, dtr_truths, optimal_dtr

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 2, 3, 4, 5
SEED_ENV = "SMARTLAB_SEED"
DEFAULT_SEED = 2024


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path: str, command: str, config: Dict[str, Any], seed: int, started: str,
                   outputs: Sequence[str]) -> None:
    """Atomically write a run manifest with SHA-256 digests of ``outputs``."""
    base = os.path.dirname(os.path.abspath(path))
    doc = {
        "tool": "smartlab",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "started": started,
        "finished": _now(),
        "outputs": {os.path.relpath(os.path.abspath(p), base): sha256_file(p) for p in outputs},
    }
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def resolve_seed(flag: Optional[int], config_seed: Optional[int]) -> int:
    """Explicit flag, then $SMARTLAB_SEED, then the config file, then the default."""
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return DEFAULT_SEED if config_seed is None else int(config_seed)


def _csv_list(text: str, cast) -> List:
    try:
        return [cast(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse list {text!r}") from None


def _sampler_from(table: Dict[str, Any], args, seed: int) -> SamplerConfig:
    kw = {k: table[k] for k in ("draws", "burn_in", "chains", "thin") if k in table}
    for k in ("draws", "burn_in", "chains", "thin"):
        v = getattr(args, k, None)
        if v is not None:
            kw[k] = v
    try:
        return SamplerConfig(seed=seed, **{k: int(v) for k, v in kw.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sampler: {exc}") from None


def _prior_kw(table: Dict[str, Any], args) -> Dict[str, Any]:
    kw: Dict[str, Any] = {}
    grid = args.tau_grid if getattr(args, "tau_grid", None) else table.get("tau_grid")
    weights = args.tau_weights if getattr(args, "tau_weights", None) else table.get("tau_weights")
    if grid is not None:
        kw["tau_grid"] = tuple(_csv_list(grid, float) if isinstance(grid, str) else map(float, grid))
    if weights is not None:
        kw["tau_weights"] = tuple(_csv_list(weights, float) if isinstance(weights, str) else map(float, weights))
    return kw


def _pool_weights(table: Dict[str, Any], args) -> str:
    w = getattr(args, "pool_weights", None) or table.get("pool_weights", "original-arms")
    if w not in POOL_WEIGHTS:
        raise ConfigError(f"pool_weights must be one of {', '.join(POOL_WEIGHTS)}, got {w!r}")
    return w


def _tau_per_coefficient(table: Dict[str, Any], args) -> bool:
    return bool(getattr(args, "tau_per_coefficient", False) or table.get("tau_per_coefficient", False))


def _gformula_n(table: Dict[str, Any], args) -> Optional[int]:
    v = getattr(args, "gformula_n", None)
    if v is None:
        v = table.get("gformula_n", 0)
    return int(v) or None


# -- commands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    started = _now()
    doc: Dict[str, Any] = load_toml(args.config) if args.config else {}
    if args.config:
        scenario, design = load_scenario_design(doc)
    else:
        scenario = get_scenario(args.scenario or "table1-s2")
        design = TrialDesign(1000, 0.5)
    if args.scenario and args.config:
        scenario = get_scenario(args.scenario)
    if args.n is not None or args.r is not None:
        design = TrialDesign(args.n if args.n is not None else design.n,
                             args.r if args.r is not None else design.r, design.q, design.allocation)
    if args.sigma is not None:
        scenario = scenario.with_sigma(args.sigma)
    seed = resolve_seed(args.seed, doc.get("design", {}).get("seed"))
    data = simulate_trial(design, scenario, seed)
    text = to_csv(data)
    if args.out in (None, "-"):
        sys.stdout.write(text)
        return EXIT_OK
    atomic_write(args.out, text)
    config = {"scenario": scenario_to_flat(scenario),
              "design": {"n": design.n, "r": design.r, "q": list(design.q), "allocation": design.allocation}}
    write_manifest(args.out + ".manifest.json", "simulate", config, seed, started, [args.out])
    print(f"wrote {len(data)} rows to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_estimate(args) -> int:
    started = _now()
    doc: Dict[str, Any] = load_toml(args.config) if args.config else {}
    table = doc.get("sampler", {})
    approaches = parse_approaches(args.approaches or "separate,pooling")
    seed = resolve_seed(args.seed, table.get("seed"))
    sampler = _sampler_from(table, args, seed)
    prior_kw = _prior_kw(table, args)
    gf_n = _gformula_n(table, args)
    pair = tuple(Dtr.parse(x) for x in (args.estimand or "d11,d31").split(","))
    if len(pair) != 2:
        raise ConfigError("--estimand needs two DTR labels, e.g. d11,d31")
    data = read_csv(args.data, outcome=args.outcome)
    rows, failed, details = [], [], {}
    pool_weights = _pool_weights(table, args)
    for approach in approaches:
        kw = prior_kw if approach == "BIGcommP" else {}
        if approach == "pooling":
            kw = {"pool_weights": pool_weights}
        if approach == "BIGcomP" and _tau_per_coefficient(table, args):
            kw = {"tau_per_coefficient": True}
        try:
            res = analyze(data, approach, (pair,), sampler, gf_n, **kw)
        except SmartlabError as exc:
            print(f"error: {approach}: {exc}", file=sys.stderr)
            failed.append(exc)
            continue
        rows.extend(res.rows())
        if res.details:
            details[approach] = res.details
        if not res.converged:
            print(f"warning: {approach}: sampler did not converge (max R-hat "
                  f"{res.details.get('max_rhat', float('nan')):.3f})", file=sys.stderr)
    text = format_rows(rows)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        atomic_write(args.out, text)
        config = {"data": os.path.abspath(args.data), "approaches": list(approaches),
                  "estimand": [d.label for d in pair], "sampler": vars(sampler),
                  "gformula_n": gf_n, "pool_weights": pool_weights, "priors": {a: d.get("prior") for a, d in details.items()},
                  "diagnostics": {a: {k: v for k, v in d.items() if k != "prior"} for a, d in details.items()}}
        write_manifest(args.out + ".manifest.json", "estimate", config, seed, started, [args.out])
    if failed:
        code = failed[0].exit_code
        return code if len(failed) == len(approaches) or not rows else EXIT_PARTIAL
    return EXIT_OK


def study_config_from(doc: Dict[str, Any], args) -> StudyConfig:
    st = dict(doc.get("study", {}))
    sm = dict(doc.get("sampler", {}))
    known = {"scenarios", "n", "r", "replicates", "approaches", "estimand", "seed", "sigma", "direction"}
    unknown = set(st) - known
    if unknown:
        raise ConfigError(f"unknown field 'study.{sorted(unknown)[0]}'")
    custom = ()
    if "scenario" in doc and isinstance(doc["scenario"], dict) and "builtin" not in doc["scenario"]:
        sc = scenario_from_flat(flatten(doc["scenario"]))
        custom = (sc,)
    scenarios = args.scenario or st.get("scenarios") or ([custom[0].name] if custom else ["table1-s2"])
    if isinstance(scenarios, str):
        scenarios = [s for s in scenarios.split(",") if s]
    n_grid = _csv_list(args.n, int) if args.n else st.get("n", [1000])
    r_grid = _csv_list(args.r, float) if args.r else st.get("r", [0.5])
    if not isinstance(n_grid, list):
        n_grid = [n_grid]
    if not isinstance(r_grid, list):
        r_grid = [r_grid]
    seed = resolve_seed(args.seed, st.get("seed"))
    kw = _prior_kw(sm, args)
    try:
        return StudyConfig(
            scenarios=tuple(scenarios), n_grid=tuple(n_grid), r_grid=tuple(r_grid),
            replicates=int(args.replicates if args.replicates is not None else st.get("replicates", 100)),
            approaches=parse_approaches(args.approaches or st.get("approaches", "all")),
            estimand=tuple(st.get("estimand", ("d11", "d31"))), seed=seed,
            sampler=_sampler_from(sm, args, 0), gformula_n=_gformula_n(sm, args),
            direction=st.get("direction"), sigma=args.sigma if args.sigma is not None else st.get("sigma"),
            pool_weights=_pool_weights(sm, args), tau_per_coefficient=_tau_per_coefficient(sm, args),
            custom=custom, **kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"study: {exc}") from None


def cmd_run_study(args) -> int:
    started = _now()
    doc = load_toml(args.config) if args.config else {}
    config = study_config_from(doc, args)
    out = args.out
    os.makedirs(out, exist_ok=True)

    def progress(msg):
        if not args.quiet:
            print(msg, file=sys.stderr)

    result = run_study(config, out, workers=args.workers, resume=args.resume, progress=progress)
    metrics = os.path.join(out, "metrics_partial.csv" if result.partial else "metrics.csv")
    outputs = [metrics]
    if not result.partial and result.rows:
        for metric in PLOT_METRICS:
            path = os.path.join(out, f"{metric}.svg")
            atomic_write(path, metric_svg(result.rows, metric))
            outputs.append(path)
    write_manifest(os.path.join(out, "manifest.json"), "run-study", config.to_dict(), config.seed, started,
                   outputs)
    for e in result.errors:
        print(f"error: {e}", file=sys.stderr)
    flagged = sorted({r.scenario for r in result.rows if r.no_true_optimal})
    if flagged:
        print(f"note: no true optimal DTR in {', '.join(flagged)}; prob_optimal reported as nan",
              file=sys.stderr)
    if result.partial or result.errors:
        return EXIT_PARTIAL
    if not args.quiet:
        sys.stdout.write(result.csv())
    return EXIT_OK


def cmd_scenarios(args) -> int:
    for name, sc in BUILTIN.items():
        truths = dtr_truths(sc, Cohort.C2)
        opt = optimal_dtr(sc, Cohort.C2)
        means = " ".join(f"{d.label}={t.mean:.4g}" for d, t in truths.items())
        print(f"{name:10s} {sc.outcome:10s} {sc.direction:8s} c2: {means} optimal={opt.label if opt else '-'}")
    return EXIT_OK


def cmd_print_schema(args) -> int:
    sys.stdout.write(SCHEMA)
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _add_sampler_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--draws", type=int, help="retained posterior draws over all chains (default 4000)")
    p.add_argument("--burn-in", dest="burn_in", type=int, help="burn-in sweeps per chain (default 2000)")
    p.add_argument("--chains", type=int, help="number of chains (default 4)")
    p.add_argument("--thin", type=int, help="sweeps per retained draw (default 5)")
    p.add_argument("--gformula-n", dest="gformula_n", type=int,
                   help="simulated G-formula population size (0: closed form)")
    p.add_argument("--tau-grid", dest="tau_grid", help="BIGcommP precisions, e.g. 0.1,20")
    p.add_argument("--tau-weights", dest="tau_weights", help="BIGcommP mixture weights, e.g. 0.5,0.5")
    p.add_argument("--pool-weights", dest="pool_weights", choices=POOL_WEIGHTS,
                   help="pooling cohort weights (default original-arms)")
    p.add_argument("--tau-per-coefficient", dest="tau_per_coefficient", action="store_true",
                   help="experimental: BIGcomP with one tau per shared coefficient")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smartlab", description="Platform SMART simulation and DTR estimation.")
    p.add_argument("--version", action="version", version=f"smartlab {__version__}")
    p.add_argument("--print-schema", action="store_true", help="print the configuration schema and exit")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("simulate", help="simulate one trial dataset")
    s.add_argument("--config", help="TOML file with [scenario] and [design]")
    s.add_argument("--scenario", help="built-in scenario name")
    s.add_argument("--n", type=int)
    s.add_argument("--r", type=float)
    s.add_argument("--sigma", type=float, help="continuous outcome SD")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="output CSV (default stdout)")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="estimate DTR means from a dataset CSV")
    e.add_argument("data", help="dataset CSV")
    e.add_argument("--approaches", help=f"comma list from {','.join(APPROACHES)} or 'all'")
    e.add_argument("--estimand", help="pair of DTRs for the difference (default d11,d31)")
    e.add_argument("--outcome", choices=("continuous", "binary"))
    e.add_argument("--config", help="TOML file with a [sampler] table")
    e.add_argument("--seed", type=int)
    e.add_argument("--out", help="output CSV (default stdout)")
    _add_sampler_flags(e)
    e.set_defaults(func=cmd_estimate)

    r = sub.add_parser("run-study", help="run a replicate simulation study")
    r.add_argument("--config", help="TOML file with [study] and [sampler]")
    r.add_argument("--scenario", action="append", help="built-in scenario (repeatable)")
    r.add_argument("--n", help="sample sizes, comma separated")
    r.add_argument("--r", help="cohort-1 fractions, comma separated")
    r.add_argument("--replicates", type=int)
    r.add_argument("--approaches")
    r.add_argument("--sigma", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--resume", action="store_true", help="reuse finished cells in --out")
    r.add_argument("--out", required=True, help="run directory")
    r.add_argument("--quiet", action="store_true")
    _add_sampler_flags(r)
    r.set_defaults(func=cmd_run_study)

    sc = sub.add_parser("scenarios", help="list built-in scenarios and their c2 DTR means")
    sc.set_defaults(func=cmd_scenarios)
    ps = sub.add_parser("print-schema", help="print the configuration schema")
    ps.set_defaults(func=cmd_print_schema)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_schema:
        return cmd_print_schema(args)
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except SmartlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
