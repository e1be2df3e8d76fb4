"""Inverse-probability-weighted DTR means with their variance/covariance,
and the separate and pooling analyses of a platform SMART."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np

from .datagen import TrialDataset
from .errors import EmptyArmError, EmptyWeightError
from .trial import ALL_DTRS, Cohort, Dtr, dtrs_in

Z95 = 1.959963984540054


def ipw_weights(data: TrialDataset, dtr: Dtr, p_j: float, q_k: float) -> np.ndarray:
    on_arm = data.a1 == dtr.first
    w = np.where(on_arm & (data.r == 0), 1.0 / p_j, 0.0)
    w += np.where(on_arm & (data.r == 1) & (data.a2 == dtr.second_on_response), 1.0 / (p_j * q_k), 0.0)
    return w


def ipw_dtr_mean(data: TrialDataset, dtr: Dtr, p_j: float, q_k: float) -> float:
    """Ratio estimator sum(w * y) / sum(w)."""
    w = ipw_weights(data, dtr, p_j, q_k)
    total = w.sum()
    if total <= 0:
        raise EmptyWeightError(f"no participant is consistent with {dtr.label}")
    return float(w @ data.y / total)


def ipw_var_empirical(data: TrialDataset, dtr: Dtr, p_j: float, q_k: float, mean_hat: float) -> float:
    """Sandwich variance (1/n^2) sum{w_i (y_i - mean_hat)}^2, n = all rows of ``data``."""
    n = len(data)
    if n == 0:
        raise EmptyWeightError("empty dataset")
    u = ipw_weights(data, dtr, p_j, q_k) * (data.y - mean_hat)
    return float(u @ u / n**2)


def ipw_cov_empirical(data: TrialDataset, dtr_a: Dtr, dtr_b: Dtr, probs: Tuple[float, float, float],
                      means: Tuple[float, float]) -> float:
    """Cross-product covariance of two DTR means.

    ``probs = (p_j, q_a, q_b)``; zero when the first-stage arms differ.
    """
    if dtr_a.first != dtr_b.first:
        return 0.0
    n = len(data)
    if n == 0:
        raise EmptyWeightError("empty dataset")
    p_j, q_a, q_b = probs
    ua = ipw_weights(data, dtr_a, p_j, q_a) * (data.y - means[0])
    ub = ipw_weights(data, dtr_b, p_j, q_b) * (data.y - means[1])
    return float(ua @ ub / n**2)


def ipw_var_asymptotic(pi: float, p_j: float, q_k: float, mu_cont: float, mu_resp: float,
                       var_cont: float, var_resp: float, n: int) -> float:
    """Large-sample variance of the IPW mean of d_jk.

    ``mu_cont``/``var_cont`` describe the non-responder sequence a1j a1j,
    ``mu_resp``/``var_resp`` the responder sequence a1j a2k.
    """
    gap2 = (mu_cont - mu_resp) ** 2
    resp = pi / (p_j * q_k) * (var_resp + (1 - pi) ** 2 * gap2)
    cont = (1 - pi) / p_j * (var_cont + pi ** 2 * gap2)
    return (resp + cont) / n


def ipw_cov_asymptotic(pi: float, p_j: float, mu_cont: float, mu_resp_a: float, mu_resp_b: float,
                       var_cont: float, n: int) -> float:
    """Large-sample covariance of d_jk and d_jk' (k != k'), sharing a1j."""
    return (1 - pi) / (p_j * n) * (var_cont + pi ** 2 * (mu_cont - mu_resp_a) * (mu_cont - mu_resp_b))


@dataclass(frozen=True)
class DtrEstimate:
    dtr: Dtr
    mean_hat: float
    var_hat: float
    approach: str
    n_effective: int

    @property
    def se(self) -> float:
        return math.sqrt(max(self.var_hat, 0.0))

    @property
    def ci(self) -> Tuple[float, float]:
        return self.mean_hat - Z95 * self.se, self.mean_hat + Z95 * self.se


@dataclass
class DtrCovarianceTable:
    """Symmetric (Dtr, Dtr) -> covariance map; missing pairs are zero."""

    entries: Dict[Tuple[Dtr, Dtr], float] = field(default_factory=dict)

    def set(self, a: Dtr, b: Dtr, value: float) -> None:
        self.entries[(a, b)] = value
        self.entries[(b, a)] = value

    def get(self, a: Dtr, b: Dtr) -> float:
        return self.entries.get((a, b), 0.0)

    def __getitem__(self, key: Tuple[Dtr, Dtr]) -> float:
        return self.get(*key)

    def matrix(self, dtrs: Iterable[Dtr]) -> np.ndarray:
        dtrs = list(dtrs)
        return np.array([[self.get(a, b) for b in dtrs] for a in dtrs])


@dataclass
class EstimateSet:
    approach: str
    estimates: Dict[Dtr, DtrEstimate]
    cov: DtrCovarianceTable

    def __getitem__(self, dtr: Dtr) -> DtrEstimate:
        return self.estimates[dtr]

    def means(self) -> Dict[Dtr, float]:
        return {d: e.mean_hat for d, e in self.estimates.items()}

    def difference(self, a: Dtr, b: Dtr) -> Tuple[float, float, Tuple[float, float]]:
        """Point estimate, variance and Wald 95% interval of mu_a - mu_b."""
        est = self.estimates[a].mean_hat - self.estimates[b].mean_hat
        var = self.cov.get(a, a) + self.cov.get(b, b) - 2 * self.cov.get(a, b)
        half = Z95 * math.sqrt(max(var, 0.0))
        return est, var, (est - half, est + half)


def cohort_estimates(data: TrialDataset, cohort, approach: str = "cohort-specific",
                     realized: bool = False) -> EstimateSet:
    """IPW means and Eq-style sandwich (co)variances within one cohort."""
    cohort = Cohort.parse(cohort)
    sub = data.subset(cohort)
    if len(sub) == 0:
        raise EmptyArmError(f"cohort {cohort.value} has no participants")
    p = sub.stage1_probs(cohort, realized=realized)
    ests: Dict[Dtr, DtrEstimate] = {}
    q: Dict[Dtr, float] = {}
    for d in dtrs_in(cohort):
        n_arm = int(np.count_nonzero(sub.a1 == d.first))
        if n_arm == 0:
            raise EmptyArmError(f"arm a1{d.first} is empty in cohort {cohort.value}")
        q[d] = sub.stage2_prob(cohort, d.first, d.second_on_response, realized=realized)
        m = ipw_dtr_mean(sub, d, p[d.first], q[d])
        v = ipw_var_empirical(sub, d, p[d.first], q[d], m)
        n_eff = int(np.count_nonzero(ipw_weights(sub, d, p[d.first], q[d])))
        ests[d] = DtrEstimate(d, m, v, approach, n_eff)
    cov = DtrCovarianceTable()
    for d in ests:
        cov.set(d, d, ests[d].var_hat)
    for a in ests:
        for b in ests:
            if a < b and a.first == b.first:
                cov.set(a, b, ipw_cov_empirical(sub, a, b, (p[a.first], q[a], q[b]),
                                                (ests[a].mean_hat, ests[b].mean_hat)))
    return EstimateSet(approach, ests, cov)


def separate_estimates(data: TrialDataset, realized: bool = False) -> EstimateSet:
    """All six DTR means from the post-adaptation cohort alone."""
    return cohort_estimates(data, Cohort.C2, approach="separate", realized=realized)


POOL_WEIGHTS = ("original-arms", "cohort-total")


def pooling_sizes(data: TrialDataset, weights: str = "original-arms") -> Tuple[int, int]:
    """Cohort sizes (n1, n2) entering the pooling weights.

    ``original-arms`` counts the participants of each cohort randomized to
    a11 or a12, the only ones who can follow an original DTR (n1 and n - n1
    under the standard allocation); ``cohort-total`` counts everyone.
    """
    if weights == "cohort-total":
        return data.cohort_size(Cohort.C1), data.cohort_size(Cohort.C2)
    if weights != "original-arms":
        raise ValueError(f"pooling weights must be one of {POOL_WEIGHTS}, got {weights!r}")
    orig = data.a1 != 3
    return (int(np.count_nonzero(orig & (data.cohort == Cohort.C1.number))),
            int(np.count_nonzero(orig & (data.cohort == Cohort.C2.number))))


def pooled_estimates(data: TrialDataset, realized: bool = False, weights: str = "original-arms") -> EstimateSet:
    """Size-weighted combination n_l / (n1 + n2) of the two cohort estimates
    for the original DTRs; DTRs starting on a13 keep their c2 estimate.
    ``weights`` selects how n_l is counted (see :func:`pooling_sizes`)."""
    if data.cohort_size(Cohort.C1) == 0 or data.cohort_size(Cohort.C2) == 0:
        raise EmptyArmError("pooling needs both cohorts")
    e1 = cohort_estimates(data, Cohort.C1, realized=realized)
    e2 = cohort_estimates(data, Cohort.C2, realized=realized)
    n1, n2 = pooling_sizes(data, weights)
    w1, w2 = n1 / (n1 + n2), n2 / (n1 + n2)
    ests: Dict[Dtr, DtrEstimate] = {}
    cov = DtrCovarianceTable()
    for d in ALL_DTRS:
        if d in e1.estimates:
            m = w1 * e1[d].mean_hat + w2 * e2[d].mean_hat
            v = w1**2 * e1[d].var_hat + w2**2 * e2[d].var_hat
            ests[d] = DtrEstimate(d, m, v, "pooling", e1[d].n_effective + e2[d].n_effective)
        else:
            e = e2[d]
            ests[d] = DtrEstimate(d, e.mean_hat, e.var_hat, "pooling", e.n_effective)
    for a in ALL_DTRS:
        for b in ALL_DTRS:
            if a > b:
                continue
            if a in e1.estimates and b in e1.estimates:
                c = w1**2 * e1.cov.get(a, b) + w2**2 * e2.cov.get(a, b)
            elif a.first == b.first:
                c = e2.cov.get(a, b)
            else:
                c = 0.0
            cov.set(a, b, c)
    return EstimateSet("pooling", ests, cov)


ESTIMATE_COLUMNS = ("approach", "dtr", "mean", "var", "ci_lo", "ci_hi")


def estimates_csv_rows(est: EstimateSet, pairs: Iterable[Tuple[Dtr, Dtr]] = ()) -> list:
    rows = []
    for d in sorted(est.estimates):
        e = est.estimates[d]
        lo, hi = e.ci
        rows.append((est.approach, d.label, e.mean_hat, e.var_hat, lo, hi))
    for a, b in pairs:
        m, v, (lo, hi) = est.difference(a, b)
        rows.append((est.approach, f"{a.label}-{b.label}", m, v, lo, hi))
    return rows


def format_rows(rows, columns=ESTIMATE_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()
