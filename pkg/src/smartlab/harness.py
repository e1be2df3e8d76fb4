"""Replicate-level simulation studies over a scenario x n x r x approach grid.

Replicate ``i`` of every grid cell simulates its trial from the stream
``(seed, i)``, so cells that share a replicate index use common random
numbers; the BIG samplers of approach ``a`` use ``(seed, SAMPLER, i, a)``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import rng as rngmod
from .approaches import APPROACHES, analyze, parse_approaches
from .big import PriorSpec, SamplerConfig
from .datagen import simulate_trial
from .errors import ConfigError, InsufficientReplicatesError, SmartlabError
from .ipw import POOL_WEIGHTS
from .scenarios import get_scenario
from .trial import Cohort, Dtr, ScenarioParams, TrialDesign, optimal_dtr, true_dtr_mean

METRIC_COLUMNS = ("approach", "scenario", "n", "r", "replicates", "bias", "bias_mcse", "var", "mse",
                  "coverage", "prob_optimal", "failures")


@dataclass(frozen=True)
class StudyConfig:
    scenarios: Tuple[str, ...] = ("table1-s2",)
    n_grid: Tuple[int, ...] = (1000,)
    r_grid: Tuple[float, ...] = (0.5,)
    replicates: int = 100
    approaches: Tuple[str, ...] = APPROACHES
    estimand: Tuple[str, str] = ("d11", "d31")
    seed: int = 2024
    sampler: SamplerConfig = SamplerConfig()
    gformula_n: Optional[int] = None  # None: exact G-formula expectation
    direction: Optional[str] = None  # None: the scenario's own direction
    sigma: Optional[float] = None  # overrides the scenario outcome SD
    tau_grid: Tuple[float, ...] = (0.1, 20.0)  # BIGcommP mixture
    tau_weights: Tuple[float, ...] = (0.5, 0.5)
    pool_weights: str = "original-arms"  # or "cohort-total"
    tau_per_coefficient: bool = False  # experimental BIGcomP option
    custom: Tuple[ScenarioParams, ...] = ()

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if not self.scenarios or not self.n_grid or not self.r_grid:
            raise ConfigError("scenario, n and r grids must be non-empty")
        object.__setattr__(self, "approaches", parse_approaches(self.approaches))
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "r_grid", tuple(float(r) for r in self.r_grid))
        object.__setattr__(self, "tau_grid", tuple(float(t) for t in self.tau_grid))
        object.__setattr__(self, "tau_weights", tuple(float(w) for w in self.tau_weights))
        if "BIGcommP" in self.approaches:
            try:
                PriorSpec("commP", tau_grid=self.tau_grid, tau_weights=self.tau_weights)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        try:
            a, b = (Dtr.parse(x) if isinstance(x, str) else x for x in self.estimand)
        except ValueError as exc:
            raise ConfigError(f"estimand: {exc}") from None
        if not (a.reachable_in(Cohort.C2) and b.reachable_in(Cohort.C2)):
            raise ConfigError("estimand DTRs must be reachable in cohort c2")
        object.__setattr__(self, "estimand", (a.label, b.label))
        if self.pool_weights not in POOL_WEIGHTS:
            raise ConfigError(f"pool_weights must be one of {POOL_WEIGHTS}, got {self.pool_weights!r}")
        if self.direction not in (None, "maximize", "minimize"):
            raise ConfigError(f"direction must be maximize or minimize, got {self.direction!r}")
        for name in self.scenarios:
            self.scenario(name)
        for n in self.n_grid:
            for r in self.r_grid:
                TrialDesign(n, r)

    def prior_options(self, approach: str) -> Dict[str, object]:
        if approach == "BIGcommP":
            return {"tau_grid": self.tau_grid, "tau_weights": self.tau_weights}
        if approach == "pooling":
            return {"pool_weights": self.pool_weights}
        if approach == "BIGcomP" and self.tau_per_coefficient:
            return {"tau_per_coefficient": True}
        return {}

    @property
    def pair(self) -> Tuple[Dtr, Dtr]:
        return Dtr.parse(self.estimand[0]), Dtr.parse(self.estimand[1])

    def scenario(self, name: str) -> ScenarioParams:
        for sc in self.custom:
            if sc.name == name:
                return sc.with_sigma(self.sigma) if self.sigma is not None else sc
        return get_scenario(name, self.sigma)

    def cells(self) -> List[Tuple[str, int, float]]:
        return [(s, n, r) for s in self.scenarios for n in self.n_grid for r in self.r_grid]

    def to_dict(self) -> Dict[str, object]:
        d = asdict(self)
        d["custom"] = [sc.name for sc in self.custom]
        return d

    def fingerprint(self, cell) -> str:
        """Digest of everything that determines a cell's replicate records."""
        d = self.to_dict()
        for k in ("scenarios", "n_grid", "r_grid"):
            d.pop(k)
        d["cell"] = list(cell)
        d["scenario_params"] = repr(self.scenario(cell[0]))
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()


@dataclass
class ReplicateRecord:
    rep: int
    approach: str
    mean: Dict[str, float] = field(default_factory=dict)
    estimate: float = math.nan
    variance: float = math.nan
    lo: float = math.nan
    hi: float = math.nan
    optimal: Optional[str] = None
    converged: bool = True
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and math.isfinite(self.estimate)


def run_replicate(config: StudyConfig, cell: Tuple[str, int, float], rep: int) -> List[ReplicateRecord]:
    """Simulate replicate ``rep`` of ``cell`` and analyze it with every approach.

    Approach failures are captured in the record's ``error`` field.
    """
    name, n, r = cell
    scenario = config.scenario(name)
    direction = config.direction or scenario.direction
    data = simulate_trial(TrialDesign(n, r), scenario, config.seed, path=(rep,))
    pair = config.pair
    out = []
    for approach in config.approaches:
        rec = ReplicateRecord(rep, approach)
        sampler = SamplerConfig(config.sampler.draws, config.sampler.burn_in, config.sampler.chains,
                                rngmod.derive_seed(config.seed, rngmod.SAMPLER, rep, APPROACHES.index(approach)),
                                config.sampler.thin)
        try:
            res = analyze(data, approach, (pair,), sampler, config.gformula_n,
                          **config.prior_options(approach))
        except (SmartlabError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            rec.error = f"{type(exc).__name__}: {exc}"
            out.append(rec)
            continue
        rec.mean = {d.label: float(v) for d, v in res.mean.items()}
        est, var, (lo, hi) = res.diff[pair]
        rec.estimate, rec.variance, rec.lo, rec.hi = float(est), float(var), float(lo), float(hi)
        opt = res.estimated_optimal(direction)
        rec.optimal = None if opt is None else opt.label
        rec.converged = bool(res.converged)
        out.append(rec)
    return out


@dataclass
class MetricsRow:
    approach: str
    scenario: str
    n: int
    r: float
    replicates: int
    bias: float
    bias_mcse: float
    var: float
    var_mcse: float
    mse: float
    mse_mcse: float
    coverage: float
    coverage_mcse: float
    prob_optimal: float
    prob_optimal_mcse: float
    failures: int
    unconverged: int = 0
    no_true_optimal: bool = False

    def csv_values(self) -> List[str]:
        return [self.approach, self.scenario, str(self.n), _fmt(self.r), str(self.replicates), _fmt(self.bias),
                _fmt(self.bias_mcse), _fmt(self.var), _fmt(self.mse), _fmt(self.coverage),
                _fmt(self.prob_optimal), str(self.failures)]


def _fmt(x: float) -> str:
    return "nan" if x is None or not math.isfinite(x) else repr(float(x))


def aggregate_metrics(records: Sequence[ReplicateRecord], truth: float, true_optimal: Optional[str],
                      approach: str, scenario: str, n: int, r: float) -> MetricsRow:
    """Operating characteristics of one approach in one cell.

    bias = mean(truth - estimate); var is the sample variance (ddof=1);
    mse = mean((truth - estimate)^2) = bias^2 + var (R-1)/R; coverage is
    the share of intervals containing the truth; prob_optimal the share of
    replicates whose estimated optimal DTR is the true one (NaN, flagged,
    when the scenario has no unique optimum). Failed replicates are excluded
    and counted.
    """
    recs = sorted((x for x in records if x.approach == approach), key=lambda x: x.rep)
    good = [x for x in recs if x.ok]
    R = len(good)
    if R < 2:
        raise InsufficientReplicatesError(
            f"{approach} in {scenario} n={n} r={r}: {R} successful replicates, need >= 2")
    est = np.array([x.estimate for x in good])
    err = truth - est
    bias = float(err.mean())
    var = float(est.var(ddof=1))
    mse = float(np.mean(err ** 2))
    cover = np.array([x.lo <= truth <= x.hi for x in good], dtype=float)
    cov = float(cover.mean())
    if true_optimal is None:
        po = po_se = math.nan
    else:
        hits = np.array([x.optimal == true_optimal for x in good], dtype=float)
        po, po_se = float(hits.mean()), float(math.sqrt(hits.mean() * (1 - hits.mean()) / R))
    return MetricsRow(
        approach, scenario, n, r, R, bias, float(est.std(ddof=1) / math.sqrt(R)),
        var, var * math.sqrt(2.0 / (R - 1)), mse, float(np.std(err ** 2, ddof=1) / math.sqrt(R)),
        cov, math.sqrt(cov * (1 - cov) / R), po, po_se,
        failures=len(recs) - R, unconverged=sum(not x.converged for x in good),
        no_true_optimal=true_optimal is None)


def cell_truth(config: StudyConfig, cell) -> Tuple[float, Optional[str]]:
    scenario = config.scenario(cell[0])
    a, b = config.pair
    truth = true_dtr_mean(scenario, Cohort.C2, a) - true_dtr_mean(scenario, Cohort.C2, b)
    opt = optimal_dtr(scenario, Cohort.C2, config.direction)
    return truth, None if opt is None else opt.label


def metrics_csv(rows: Iterable[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for row in rows:
        w.writerow(row.csv_values())
    return buf.getvalue()


def atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _cell_file(run_dir: str, cell) -> str:
    name, n, r = cell
    return os.path.join(run_dir, "cells", f"{name}_n{n}_r{r:g}.json")


def _load_cell(path: str, fingerprint: str) -> Optional[List[ReplicateRecord]]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, ValueError):
        return None
    if doc.get("fingerprint") != fingerprint:
        return None
    return [ReplicateRecord(**rec) for rec in doc["records"]]


def _save_cell(path: str, fingerprint: str, cell, records: Sequence[ReplicateRecord]) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    doc = {"fingerprint": fingerprint, "cell": list(cell), "records": [asdict(x) for x in records]}
    atomic_write(path, json.dumps(doc, indent=1, allow_nan=True))


@dataclass
class StudyResult:
    rows: List[MetricsRow]
    records: Dict[Tuple[str, int, float], List[ReplicateRecord]]
    partial: bool = False
    skipped_cells: int = 0
    errors: List[str] = field(default_factory=list)

    def row(self, approach: str, scenario: Optional[str] = None, n=None, r=None) -> MetricsRow:
        for x in self.rows:
            if x.approach == approach and (scenario is None or x.scenario == scenario) \
                    and (n is None or x.n == n) and (r is None or x.r == r):
                return x
        raise KeyError(approach)

    def csv(self) -> str:
        return metrics_csv(self.rows)


def _cell_rows(config: StudyConfig, cell, records) -> Tuple[List[MetricsRow], List[str]]:
    truth, opt = cell_truth(config, cell)
    rows, errors = [], []
    for approach in config.approaches:
        try:
            rows.append(aggregate_metrics(records, truth, opt, approach, *cell))
        except InsufficientReplicatesError as exc:
            errors.append(str(exc))
            first = next((x.error for x in records if x.approach == approach and x.error), None)
            if first:
                errors.append(f"  first failure: {first}")
    return rows, errors


def _replicate_task(args):
    config, cell, rep = args
    return run_replicate(config, cell, rep)


def run_study(config: StudyConfig, run_dir: Optional[str] = None, workers: int = 1, resume: bool = False,
              progress: Optional[Callable[[str], None]] = None) -> StudyResult:
    """Run every grid cell and aggregate metrics.

    Cells finished earlier are reused when ``resume`` is set and their
    checkpoint matches the configuration. On interruption the metrics of
    completed cells are written to ``metrics_partial.csv`` and the result is
    returned with ``partial=True``.
    """
    records: Dict[Tuple[str, int, float], List[ReplicateRecord]] = {}
    rows: List[MetricsRow] = []
    errors: List[str] = []
    skipped = 0
    partial = False
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for cell in config.cells():
            fp = config.fingerprint(cell)
            path = _cell_file(run_dir, cell) if run_dir else None
            recs = _load_cell(path, fp) if (resume and path) else None
            if recs is not None:
                skipped += 1
                if progress:
                    progress(f"cell {cell}: reused checkpoint")
            else:
                tasks = [(config, cell, rep) for rep in range(config.replicates)]
                if pool is None:
                    per_rep = map(_replicate_task, tasks)
                else:
                    per_rep = pool.map(_replicate_task, tasks, chunksize=max(1, len(tasks) // (4 * workers)))
                recs = [rec for group in per_rep for rec in group]
                if path:
                    _save_cell(path, fp, cell, recs)
                if progress:
                    progress(f"cell {cell}: {config.replicates} replicates done")
            records[cell] = recs
            cell_rows, cell_errors = _cell_rows(config, cell, recs)
            rows.extend(cell_rows)
            errors.extend(cell_errors)
    except KeyboardInterrupt:
        partial = True
    finally:
        if pool is not None:
            pool.shutdown(wait=not partial, cancel_futures=partial)
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        atomic_write(os.path.join(run_dir, "metrics_partial.csv" if partial else "metrics.csv"),
                     metrics_csv(rows))
    return StudyResult(rows, records, partial, skipped, errors)
