"""One entry point for the six analysis approaches with a common result type."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

from . import big, ipw
from .datagen import TrialDataset
from .errors import ConfigError
from .trial import Dtr, select_optimal

APPROACHES = ("separate", "pooling", "BIGweak", "BIGlogdis", "BIGcomP", "BIGcommP")
FREQUENTIST = ("separate", "pooling")
DEFAULT_PAIR = (Dtr(1, 1), Dtr(3, 1))

Interval = Tuple[float, float]


def parse_approaches(spec) -> Tuple[str, ...]:
    """Comma-separated string or sequence -> validated approach names ("all" allowed)."""
    if isinstance(spec, str):
        items = [s.strip() for s in spec.split(",") if s.strip()]
    else:
        items = list(spec)
    if items == ["all"]:
        return APPROACHES
    lookup = {a.lower(): a for a in APPROACHES}
    out = []
    for a in items:
        if a.lower() not in lookup:
            raise ConfigError(f"unknown approach {a!r}; choose from {', '.join(APPROACHES)}")
        if lookup[a.lower()] not in out:
            out.append(lookup[a.lower()])
    if not out:
        raise ConfigError("no approaches requested")
    return tuple(out)


@dataclass
class AnalysisResult:
    approach: str
    mean: Dict[Dtr, float]
    var: Dict[Dtr, float]
    interval: Dict[Dtr, Interval]
    diff: Dict[Tuple[Dtr, Dtr], Tuple[float, float, Interval]]
    converged: bool = True
    details: Dict[str, object] = field(default_factory=dict)

    def estimated_optimal(self, direction: str) -> Optional[Dtr]:
        return select_optimal(self.mean, direction)

    def rows(self):
        """(approach, label, mean, var, lo, hi) rows: each DTR then each difference."""
        out = []
        for d in sorted(self.mean):
            lo, hi = self.interval[d]
            out.append((self.approach, d.label, self.mean[d], self.var[d], lo, hi))
        for (a, b), (m, v, (lo, hi)) in self.diff.items():
            out.append((self.approach, f"{a.label}-{b.label}", m, v, lo, hi))
        return out


def _from_estimate_set(es: ipw.EstimateSet, pairs) -> AnalysisResult:
    return AnalysisResult(
        es.approach,
        {d: e.mean_hat for d, e in es.estimates.items()},
        {d: e.var_hat for d, e in es.estimates.items()},
        {d: e.ci for d, e in es.estimates.items()},
        {(a, b): es.difference(a, b) for a, b in pairs},
    )


def analyze(data: TrialDataset, approach: str, pairs: Sequence[Tuple[Dtr, Dtr]] = (DEFAULT_PAIR,),
            sampler: big.SamplerConfig = big.SamplerConfig(), gformula_n: Optional[int] = None,
            realized: bool = False, pool_weights: str = "original-arms", **prior_kw) -> AnalysisResult:
    """Analyze ``data`` with one approach.

    Frequentist approaches report Wald intervals; BIG approaches report
    equal-tailed 95% credible intervals. Sampler non-convergence is returned
    as ``converged=False`` rather than raised.
    """
    if approach == "separate":
        return _from_estimate_set(ipw.separate_estimates(data, realized), pairs)
    if approach == "pooling":
        return _from_estimate_set(ipw.pooled_estimates(data, realized, pool_weights), pairs)
    if approach not in big.APPROACH_VARIANT:
        raise ConfigError(f"unknown approach {approach!r}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", big.ConvergenceWarning)
        res = big.fit_big(data, approach, sampler, pairs, gformula_n, **prior_kw)
    s = res.summary
    diag = res.draws.diagnostics
    details: Dict[str, object] = {
        "prior": res.draws.prior.describe(),
        "max_rhat": max(diag.rhat.values()),
        "min_ess": min(diag.ess.values()),
    }
    freq = res.draws.component_frequencies()
    if freq is not None:
        details["component_frequencies"] = [float(f) for f in freq]
    finite = all(math.isfinite(v) for v in s.mean.values())
    return AnalysisResult(approach, s.mean, s.var, s.ci, s.diff, diag.converged and finite, details)
