"""Bayesian integration G-formula (BIG) estimators.

Parameters are the 12 coefficients of the response and outcome models
(``COEF_LABELS``) plus the outcome SD for continuous outcomes. Eight of the
coefficients can borrow from the pre-adaptation cohort (``SHARED_LABELS``);
the four that involve a13 cannot (``NEW_LABELS``).

Prior variants
--------------
weak      Normal(weak_mean, weak_sd) on every coefficient.
logdis    Normal(c1 MLE, sqrt(max(gap^2, var_c1))) on each shared
          coefficient, weak on the rest.
comP      Shared coefficients ~ Normal(theta_s1, 1/tau) where theta_s1 are
          the c1 coefficients, sampled jointly with the c1 likelihood;
          tau ~ log-uniform (one tau, or one per shared coefficient with
          ``tau_per_coefficient``).
commP     As comP with tau drawn from a fixed grid with fixed weights,
          realized through a latent component indicator.

Because both models are saturated in the treatment cells, likelihoods are
evaluated from per-cell sufficient statistics.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
from numba import njit
from scipy.special import expit

from . import glm
from . import rng as rngmod
from .datagen import TrialDataset
from .errors import DataError, MisalignedError
from .mcmc import Block, adaptive_mwg, effective_sample_size, split_rhat
from .trial import ALL_DTRS, CONTINUE, Cohort, Dtr

COEF_LABELS = glm.RESPONSE_LABELS + glm.OUTCOME_LABELS
SHARED_LABELS = ("beta0", "beta1", "psi_r0", "psi_r1", "psi_r3", "psi_r4", "psi_nr0", "psi_nr1")
NEW_LABELS = ("beta2", "psi_r2", "psi_r5", "psi_nr2")
SHARED_IDX = np.array([COEF_LABELS.index(s) for s in SHARED_LABELS])
NEW_IDX = np.array([COEF_LABELS.index(s) for s in NEW_LABELS])
N_COEF = len(COEF_LABELS)

VARIANTS = ("weak", "logdis", "comP", "commP")
APPROACH_VARIANT = {"BIGweak": "weak", "BIGlogdis": "logdis", "BIGcomP": "comP", "BIGcommP": "commP"}

RHAT_LIMIT = 1.05
_LOG2PI = math.log(2 * math.pi)

# Cell layout shared by the sufficient statistics and the G-formula.
RESP_CELLS = tuple((j, k) for j in (1, 2, 3) for k in (1, 2))
NONRESP_CELLS = tuple((j, CONTINUE) for j in (1, 2, 3))
CELLS = RESP_CELLS + NONRESP_CELLS
_OUT_SPEC = glm.ModelSpec("outcome-linear")
_RESP_SPEC = glm.ModelSpec("response-logistic")
X_ARM = np.array([_RESP_SPEC.design_row(j, 0, CONTINUE) for j in (1, 2, 3)])
X_CELL = np.array([_OUT_SPEC.design_row(j, int(k != CONTINUE), k) for j, k in CELLS])


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CellStats:
    """Per-arm response counts and per-cell outcome summaries of one cohort."""

    outcome: str
    arm_n: np.ndarray
    arm_resp: np.ndarray
    cell_n: np.ndarray
    cell_mean: np.ndarray
    cell_ss: np.ndarray  # within-cell sum of squared deviations

    @classmethod
    def from_dataset(cls, data: TrialDataset, cohort=None) -> "CellStats":
        if cohort is not None:
            data = data.subset(cohort)
        arm_n = np.array([np.count_nonzero(data.a1 == j) for j in (1, 2, 3)], dtype=float)
        arm_resp = np.array([np.count_nonzero((data.a1 == j) & (data.r == 1)) for j in (1, 2, 3)], dtype=float)
        cell_n, cell_mean, cell_ss = np.zeros(9), np.zeros(9), np.zeros(9)
        for c, (j, k) in enumerate(CELLS):
            ys = data.y[(data.a1 == j) & (data.a2 == k)]
            if len(ys):
                cell_n[c] = len(ys)
                cell_mean[c] = ys.mean()
                cell_ss[c] = ((ys - cell_mean[c]) ** 2).sum()
        return cls(data.outcome, arm_n, arm_resp, cell_n, cell_mean, cell_ss)

    @property
    def n(self) -> int:
        return int(self.arm_n.sum())

    def shifted(self, c: float) -> "CellStats":
        return replace(self, cell_mean=np.where(self.cell_n > 0, self.cell_mean + c, 0.0))

    def loglik(self, coef: np.ndarray, sigma: Optional[np.ndarray] = None) -> np.ndarray:
        """Joint response + outcome log-likelihood for each row of ``coef``."""
        coef = np.atleast_2d(coef)
        eta = coef[:, :3] @ X_ARM.T
        ll = (self.arm_resp * eta - self.arm_n * np.logaddexp(0.0, eta)).sum(axis=1)
        m = coef[:, 3:] @ X_CELL.T
        if self.outcome == "binary":
            succ = self.cell_n * self.cell_mean
            ll += (succ * m - self.cell_n * np.logaddexp(0.0, m)).sum(axis=1)
            return ll
        s2 = np.asarray(sigma, dtype=float).reshape(-1) ** 2
        rss = self.cell_ss.sum() + (self.cell_n * (self.cell_mean - m) ** 2).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = ll - 0.5 * self.n_outcome * (_LOG2PI + np.log(s2)) - 0.5 * rss / s2
        return np.where(s2 > 0, out, -np.inf)

    @property
    def n_outcome(self) -> float:
        return float(self.cell_n.sum())


def _as_stats(data, cohort=None) -> Optional[CellStats]:
    if data is None or isinstance(data, CellStats):
        return data
    return CellStats.from_dataset(data, cohort)


@dataclass(frozen=True)
class LogDistancePrior:
    labels: Tuple[str, ...]
    loc: np.ndarray
    scale: np.ndarray

    def __getitem__(self, label: str) -> Tuple[float, float]:
        i = self.labels.index(label)
        return float(self.loc[i]), float(self.scale[i])


def build_log_distance_prior(fit_c1: glm.MleFit, fit_c2: glm.MleFit) -> LogDistancePrior:
    """Normal prior per c1 coefficient: centred at the c1 MLE with scale
    sqrt(max((c2 MLE - c1 MLE)^2, c1 MLE variance))."""
    if fit_c1.kind != fit_c2.kind:
        raise MisalignedError(f"cannot align a {fit_c1.kind} fit with a {fit_c2.kind} fit")
    missing = [lab for lab in fit_c1.labels if lab not in fit_c2.labels]
    if missing:
        raise MisalignedError(f"coefficients {missing} absent from the c2 fit")
    loc = np.array([fit_c1[lab] for lab in fit_c1.labels])
    gap2 = np.array([(fit_c2[lab] - fit_c1[lab]) ** 2 for lab in fit_c1.labels])
    var1 = np.array([fit_c1.var(lab) for lab in fit_c1.labels])
    return LogDistancePrior(tuple(fit_c1.labels), loc, np.sqrt(np.maximum(gap2, var1)))


@dataclass(frozen=True)
class PriorSpec:
    """Prior for one BIG variant. Hyperparameters not fixed by the method
    default to weakly informative proper choices."""

    variant: str = "weak"
    weak_mean: Tuple[float, ...] = (0.0,) * N_COEF
    weak_sd: float = 10.0
    logdis: Optional[LogDistancePrior] = None
    s1_mean: Tuple[float, ...] = (0.0,) * len(SHARED_LABELS)
    s1_sd: float = 10.0
    sigma_scale: float = 10.0
    tau_bounds: Tuple[float, float] = (0.01, 100.0)
    tau_fixed: Optional[float] = None
    tau_per_coefficient: bool = False  # experimental: independent tau_b per shared coefficient
    tau_grid: Tuple[float, ...] = (0.1, 20.0)
    tau_weights: Tuple[float, ...] = (0.5, 0.5)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown prior variant {self.variant!r}")
        if self.variant == "logdis":
            if self.logdis is None:
                raise ValueError("log-distance prior needs c1/c2 fits")
            if set(self.logdis.labels) != set(SHARED_LABELS):
                raise MisalignedError(f"log-distance prior covers {self.logdis.labels}, need {SHARED_LABELS}")
        if self.variant == "commP":
            w = np.asarray(self.tau_weights, dtype=float)
            if len(self.tau_grid) != len(w) or len(w) == 0:
                raise ValueError("tau grid and weights differ in length")
            if np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
                raise ValueError(f"mixture weights must be a simplex vector, got {self.tau_weights}")
            if any(t <= 0 for t in self.tau_grid):
                raise ValueError("tau grid values must be positive")
        if self.tau_per_coefficient and (self.variant != "comP" or self.tau_fixed is not None):
            raise ValueError("per-coefficient tau applies to comP with a free tau")
        if self.tau_fixed is not None and self.tau_fixed <= 0:
            raise ValueError("tau must be positive")
        lo, hi = self.tau_bounds
        if not 0 < lo < hi:
            raise ValueError("tau bounds must satisfy 0 < lo < hi")

    @property
    def commensurate(self) -> bool:
        return self.variant in ("comP", "commP")

    @property
    def samples_tau(self) -> bool:
        return self.variant == "comP" and self.tau_fixed is None

    @property
    def n_tau(self) -> int:
        return len(SHARED_LABELS) if self.tau_per_coefficient else 1

    def logdis_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        order = [self.logdis.labels.index(s) for s in SHARED_LABELS]
        return self.logdis.loc[order], self.logdis.scale[order]

    def describe(self) -> Dict[str, object]:
        out: Dict[str, object] = {"variant": self.variant, "weak_sd": self.weak_sd,
                                  "sigma_prior": f"half-normal({self.sigma_scale})"}
        if self.variant == "logdis":
            loc, scale = self.logdis_arrays()
            out["logdis"] = {lab: [float(l_), float(s_)] for lab, l_, s_ in zip(SHARED_LABELS, loc, scale)}
        if self.variant == "comP":
            out["tau"] = (self.tau_fixed if self.tau_fixed is not None
                          else f"log-uniform{list(self.tau_bounds)}"
                          + (" per coefficient" if self.tau_per_coefficient else ""))
            out["theta_s1_prior_sd"] = self.s1_sd
        if self.variant == "commP":
            out["tau_grid"] = list(self.tau_grid)
            out["tau_weights"] = list(self.tau_weights)
            out["theta_s1_prior_sd"] = self.s1_sd
        return out


def weak_prior(**kw) -> PriorSpec:
    return PriorSpec("weak", **kw)


def make_prior(variant: str, data: Optional[TrialDataset] = None, **kw) -> PriorSpec:
    """Prior for ``variant``; the log-distance prior is built from MLE fits
    of both cohorts of ``data``."""
    variant = APPROACH_VARIANT.get(variant, variant)
    if variant == "logdis":
        if data is None or data.cohort_size(Cohort.C1) == 0:
            raise DataError("prior source cohort missing: log-distance prior needs cohort c1 data")
        r1, o1 = glm.fit_models(data, Cohort.C1)
        r2, o2 = glm.fit_models(data, Cohort.C2)
        pr, po = build_log_distance_prior(r1, r2), build_log_distance_prior(o1, o2)
        kw["logdis"] = LogDistancePrior(pr.labels + po.labels, np.concatenate([pr.loc, po.loc]),
                                        np.concatenate([pr.scale, po.scale]))
    return PriorSpec(variant, **kw)


@dataclass
class ParameterState:
    coef: np.ndarray
    sigma: Optional[float] = None
    theta_s1: Optional[np.ndarray] = None
    tau: Optional[float] = None  # array of length B with per-coefficient tau
    h: Optional[int] = None

    @property
    def theta_s(self) -> np.ndarray:
        return np.asarray(self.coef)[SHARED_IDX]

    @property
    def theta_ns(self) -> np.ndarray:
        return np.asarray(self.coef)[NEW_IDX]


def _norm_logpdf(x, mean, sd):
    z = (x - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * _LOG2PI


class _Target:
    """Vectorized log posterior over the flat sampler state.

    Flat layout: 12 coefficients, then log sigma (continuous), then the 8 c1
    coefficients (commensurate variants), then log tau (comP with free tau;
    8 entries with per-coefficient tau).
    Works on the natural scale when ``jacobian=False``.
    """

    def __init__(self, stats_c1: Optional[CellStats], stats_c2: CellStats, prior: PriorSpec):
        if stats_c2 is None or stats_c2.n == 0:
            raise DataError("cohort c2 has no participants")
        if prior.commensurate and (stats_c1 is None or stats_c1.n == 0):
            raise DataError("prior source cohort missing: commensurate priors need cohort c1 data")
        self.c1, self.c2, self.prior = stats_c1, stats_c2, prior
        self.continuous = stats_c2.outcome == "continuous"
        pos = N_COEF
        self.i_sigma = self.i_s1 = self.i_tau = None
        if self.continuous:
            self.i_sigma, pos = pos, pos + 1
        if prior.commensurate:
            self.i_s1, pos = np.arange(pos, pos + len(SHARED_IDX)), pos + len(SHARED_IDX)
        self.n_tau = prior.n_tau
        if prior.samples_tau:
            self.i_tau, pos = pos, pos + self.n_tau
        self.dim = pos
        self.weak_mean = np.asarray(prior.weak_mean, dtype=float)
        self.s1_mean = np.asarray(prior.s1_mean, dtype=float)
        self.log_w = np.log(np.asarray(prior.tau_weights, dtype=float)) if prior.variant == "commP" else None
        self.tau_grid = np.asarray(prior.tau_grid, dtype=float)
        self.ld_loc, self.ld_scale = np.zeros(len(SHARED_IDX)), np.ones(len(SHARED_IDX))
        if prior.variant == "logdis":
            self.ld_loc, self.ld_scale = prior.logdis_arrays()
        lo, hi = prior.tau_bounds
        self.log_tau_lo, self.log_tau_hi = math.log(lo), math.log(hi)

    def embed_s1(self, s1: np.ndarray) -> np.ndarray:
        full = np.zeros((s1.shape[0], N_COEF))
        full[:, SHARED_IDX] = s1
        return full

    def link_terms(self, theta_s: np.ndarray, s1: np.ndarray, tau: np.ndarray,
                   per_coefficient: bool = False) -> np.ndarray:
        """sum_b log Normal(theta_s_b | s1_b, 1/tau) for tau of shape (chains,)
        or (chains, H); with ``per_coefficient`` tau is (chains, B)."""
        sq = (theta_s - s1) ** 2
        if per_coefficient:
            return (0.5 * (np.log(tau) - _LOG2PI) - 0.5 * tau * sq).sum(axis=1)
        d2 = sq.sum(axis=1)
        B = theta_s.shape[1]
        if tau.ndim == 2:
            d2 = d2[:, None]
        return 0.5 * B * (np.log(tau) - _LOG2PI) - 0.5 * tau * d2

    def __call__(self, z: np.ndarray, h: Optional[np.ndarray] = None, jacobian: bool = True) -> np.ndarray:
        p = self.prior
        coef = z[:, :N_COEF]
        if self.continuous:
            if jacobian:
                log_sigma = z[:, self.i_sigma]
                sigma = np.exp(log_sigma)
            else:
                sigma = z[:, self.i_sigma]
                with np.errstate(divide="ignore"):
                    log_sigma = np.log(sigma)
            # Half-normal prior on sigma.
            lp = math.log(2.0) + _norm_logpdf(sigma, 0.0, p.sigma_scale)
            if jacobian:
                lp = lp + log_sigma
            lp = np.where(sigma > 0, lp, -np.inf)
        else:
            sigma = None
            lp = np.zeros(z.shape[0])
        lp = lp + self.c2.loglik(coef, sigma)
        if p.variant == "weak":
            lp += _norm_logpdf(coef, self.weak_mean, p.weak_sd).sum(axis=1)
            return lp
        lp += _norm_logpdf(coef[:, NEW_IDX], self.weak_mean[NEW_IDX], p.weak_sd).sum(axis=1)
        if p.variant == "logdis":
            lp += _norm_logpdf(coef[:, SHARED_IDX], self.ld_loc, self.ld_scale).sum(axis=1)
            return lp
        s1 = z[:, self.i_s1]
        lp += self.c1.loglik(self.embed_s1(s1), sigma)
        lp += _norm_logpdf(s1, self.s1_mean, p.s1_sd).sum(axis=1)
        if p.variant == "commP":
            tau = self.tau_grid[h]
            lp += self.log_w[h]
        elif p.tau_fixed is not None:
            tau = np.full(z.shape[0], float(p.tau_fixed))
        else:
            sl = slice(self.i_tau, self.i_tau + self.n_tau)
            log_range = self.n_tau * math.log(self.log_tau_hi - self.log_tau_lo)
            if jacobian:
                log_tau = z[:, sl]
                tau = np.exp(log_tau)
                inside = ((log_tau >= self.log_tau_lo) & (log_tau <= self.log_tau_hi)).all(axis=1)
                # Log-uniform tau is flat in log tau.
                lp = np.where(inside, lp - log_range, -np.inf)
            else:
                tau = z[:, sl]
                with np.errstate(divide="ignore", invalid="ignore"):
                    log_tau = np.log(tau)
                inside = ((tau > 0) & (log_tau >= self.log_tau_lo) & (log_tau <= self.log_tau_hi)).all(axis=1)
                jac = np.where(tau > 0, log_tau, 0.0).sum(axis=1)
                lp = np.where(inside, lp - jac - log_range, -np.inf)
                tau = np.where(tau > 0, tau, 1.0)
            if not p.tau_per_coefficient:
                tau = tau[:, 0]
            lp += self.link_terms(coef[:, SHARED_IDX], s1, tau, p.tau_per_coefficient)
            return lp
        lp += self.link_terms(coef[:, SHARED_IDX], s1, tau)
        return lp

    def flatten(self, state: ParameterState, log_scale: bool) -> np.ndarray:
        z = np.zeros(self.dim)
        z[:N_COEF] = state.coef
        if self.continuous:
            if state.sigma is None:
                raise ValueError("continuous outcome needs sigma")
            z[self.i_sigma] = math.log(state.sigma) if (log_scale and state.sigma > 0) else (
                -math.inf if log_scale else state.sigma)
        if self.i_s1 is not None:
            if state.theta_s1 is None:
                raise ValueError(f"{self.prior.variant} needs theta_s1")
            z[self.i_s1] = state.theta_s1
        if self.i_tau is not None:
            if state.tau is None:
                raise ValueError("comP needs tau")
            tau = np.broadcast_to(np.asarray(state.tau, dtype=float), (self.n_tau,))
            with np.errstate(divide="ignore"):
                z[self.i_tau:self.i_tau + self.n_tau] = np.log(tau) if log_scale else tau
        return z


def log_posterior_density(state: ParameterState, data_c1, data_c2, prior: PriorSpec) -> float:
    """Unnormalized log posterior on the natural parameter scale.

    ``data_c1``/``data_c2`` are cohort datasets (or :class:`CellStats`);
    ``data_c1`` is only read by commensurate variants.
    """
    stats_c2 = _as_stats(data_c2, Cohort.C2 if isinstance(data_c2, TrialDataset) else None)
    stats_c1 = _as_stats(data_c1, Cohort.C1 if isinstance(data_c1, TrialDataset) else None)
    target = _Target(stats_c1, stats_c2, prior)
    if len(np.asarray(state.coef)) != N_COEF:
        raise ValueError(f"expected {N_COEF} coefficients")
    z = target.flatten(state, log_scale=False)[None, :]
    h = None
    if prior.variant == "commP":
        if state.h is None or not 0 <= state.h < len(prior.tau_grid):
            return -math.inf
        h = np.array([state.h])
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(target(z, h, jacobian=False)[0])


@dataclass(frozen=True)
class SamplerConfig:
    draws: int = 4000  # retained, summed over chains
    burn_in: int = 2000
    chains: int = 4
    seed: int = 0
    thin: int = 5  # sweeps per retained draw

    def __post_init__(self):
        if self.draws < self.chains or self.chains < 1 or self.burn_in < 0:
            raise ValueError("need chains >= 1, draws >= chains, burn_in >= 0")

    @property
    def per_chain(self) -> int:
        return self.draws // self.chains


@dataclass
class SamplerDiagnostics:
    acceptance: Dict[str, float]
    burn_acceptance: Dict[str, float]
    rhat: Dict[str, float]
    ess: Dict[str, float]
    chains: int
    per_chain: int

    @property
    def converged(self) -> bool:
        return all(not (v > RHAT_LIMIT) for v in self.rhat.values())

    def report(self) -> str:
        lines = [f"chains={self.chains} draws/chain={self.per_chain} converged={self.converged}"]
        lines += [f"  accept[{k}] = {v:.3f} (burn-in {self.burn_acceptance[k]:.3f})"
                  for k, v in self.acceptance.items()]
        lines += [f"  {k:8s} rhat={self.rhat[k]:.4f} ess={self.ess[k]:.0f}" for k in self.rhat]
        return "\n".join(lines)


@dataclass
class PosteriorDraws:
    outcome: str
    prior: PriorSpec
    coef: np.ndarray  # (M, 12), chain-major
    sigma: Optional[np.ndarray]
    theta_s1: Optional[np.ndarray]
    tau: Optional[np.ndarray]
    h: Optional[np.ndarray]
    diagnostics: SamplerDiagnostics

    @property
    def M(self) -> int:
        return self.coef.shape[0]

    def component_frequencies(self) -> Optional[np.ndarray]:
        if self.h is None:
            return None
        return np.bincount(self.h, minlength=len(self.prior.tau_grid)) / len(self.h)

    def state(self, m: int) -> ParameterState:
        return ParameterState(
            self.coef[m], None if self.sigma is None else float(self.sigma[m]),
            None if self.theta_s1 is None else self.theta_s1[m],
            None if self.tau is None else (self.tau[m].copy() if self.tau.ndim == 2 else float(self.tau[m])),
            None if self.h is None else int(self.h[m]))

    def columns(self) -> Dict[str, np.ndarray]:
        cols = {lab: self.coef[:, i] for i, lab in enumerate(COEF_LABELS)}
        if self.sigma is not None:
            cols["sigma"] = self.sigma
        if self.theta_s1 is not None:
            cols.update({f"{lab}_c1": self.theta_s1[:, i] for i, lab in enumerate(SHARED_LABELS)})
        if self.tau is not None and self.tau.ndim == 2:
            cols.update({f"tau_{lab}": self.tau[:, i] for i, lab in enumerate(SHARED_LABELS)})
        elif self.tau is not None:
            cols["tau"] = self.tau
        if self.h is not None:
            cols["component"] = self.h
        return cols


_VARIANT_CODE = {v: i for i, v in enumerate(VARIANTS)}


@njit(cache=True)
def _log1pexp(v):
    return max(v, 0.0) + math.log1p(math.exp(-abs(v)))


@njit(cache=True)
def _nb_loglik(st, coef, sigma, binary, xarm, xcell):
    """Cohort log-likelihood from a (5, 9) statistics table (rows: arm n,
    arm responders, cell n, cell mean, cell SS)."""
    ll = 0.0
    for j in range(3):
        eta = 0.0
        for i in range(3):
            eta += xarm[j, i] * coef[i]
        ll += st[1, j] * eta - st[0, j] * _log1pexp(eta)
    rss = 0.0
    n_out = 0.0
    for c in range(9):
        n = st[2, c]
        if n == 0.0:
            continue
        m = 0.0
        for i in range(9):
            m += xcell[c, i] * coef[3 + i]
        if binary:
            ll += n * st[3, c] * m - n * _log1pexp(m)
        else:
            d = st[3, c] - m
            rss += st[4, c] + n * d * d
            n_out += n
    if not binary:
        ll += -0.5 * n_out * (_LOG2PI + 2.0 * math.log(sigma)) - 0.5 * rss / (sigma * sigma)
    return ll


@njit(cache=True)
def _nb_norm(x, m, sd):
    z = (x - m) / sd
    return -0.5 * z * z - math.log(sd) - 0.5 * _LOG2PI


@njit(cache=True)
def _nb_log_target(x, h, P):
    """Log posterior on the sampler scale (log sigma, log tau), Jacobians included."""
    st2, st1, xarm, xcell, cfg, weak_mean, ld_loc, ld_scale, s1_mean, tau_grid, log_w, lay, sh, nw = P
    variant, binary, i_sigma, i_s1, i_tau, n_tau = lay[0], lay[1] == 1, lay[2], lay[3], lay[4], lay[5]
    weak_sd, s1_sd, sigma_scale, lt_lo, lt_hi, tau_fixed = cfg[0], cfg[1], cfg[2], cfg[3], cfg[4], cfg[5]
    lp = 0.0
    sigma = 1.0
    if not binary:
        ls = x[i_sigma]
        sigma = math.exp(ls)
        if not sigma > 0.0 or not math.isfinite(sigma):
            return -math.inf
        lp += math.log(2.0) + _nb_norm(sigma, 0.0, sigma_scale) + ls
    lp += _nb_loglik(st2, x, sigma, binary, xarm, xcell)
    if variant == 0:
        for i in range(12):
            lp += _nb_norm(x[i], weak_mean[i], weak_sd)
        return lp
    for i in range(nw.shape[0]):
        lp += _nb_norm(x[nw[i]], weak_mean[nw[i]], weak_sd)
    if variant == 1:
        for b in range(sh.shape[0]):
            lp += _nb_norm(x[sh[b]], ld_loc[b], ld_scale[b])
        return lp
    B = sh.shape[0]
    full1 = np.zeros(12)
    d2 = 0.0
    for b in range(B):
        v = x[i_s1 + b]
        full1[sh[b]] = v
        lp += _nb_norm(v, s1_mean[b], s1_sd)
        d = x[sh[b]] - v
        d2 += d * d
    lp += _nb_loglik(st1, full1, sigma, binary, xarm, xcell)
    if variant == 3:
        tau = tau_grid[h]
        lp += log_w[h]
    elif tau_fixed > 0.0:
        tau = tau_fixed
    elif n_tau > 1:
        for b in range(B):
            lt = x[i_tau + b]
            if lt < lt_lo or lt > lt_hi:
                return -math.inf
            d = x[sh[b]] - x[i_s1 + b]
            lp += 0.5 * (lt - _LOG2PI) - 0.5 * math.exp(lt) * d * d - math.log(lt_hi - lt_lo)
        return lp
    else:
        lt = x[i_tau]
        if lt < lt_lo or lt > lt_hi:
            return -math.inf
        tau = math.exp(lt)
        lp -= math.log(lt_hi - lt_lo)
    lp += 0.5 * B * (math.log(tau) - _LOG2PI) - 0.5 * tau * d2
    return lp


@njit(cache=True)
def _nb_update_h(x, h, P, u):
    """Exact draw of the mixture component given everything else."""
    sh, tau_grid, log_w, i_s1 = P[12], P[9], P[10], P[11][3]
    B = sh.shape[0]
    d2 = 0.0
    for b in range(B):
        d = x[sh[b]] - x[i_s1 + b]
        d2 += d * d
    H = tau_grid.shape[0]
    logp = np.empty(H)
    for k in range(H):
        logp[k] = log_w[k] + 0.5 * B * math.log(tau_grid[k]) - 0.5 * tau_grid[k] * d2
    mx = logp.max()
    prob = np.exp(logp - mx)
    prob /= prob.sum()
    acc = 0.0
    for k in range(H - 1):
        acc += prob[k]
        if u < acc:
            return k
    return H - 1


def _stats_table(st: Optional[CellStats]) -> np.ndarray:
    tab = np.zeros((5, 9))
    if st is not None:
        tab[0, :3], tab[1, :3] = st.arm_n, st.arm_resp
        tab[2], tab[3], tab[4] = st.cell_n, st.cell_mean, st.cell_ss
    return tab


def _pack(target: "_Target") -> tuple:
    p = target.prior
    ld_loc, ld_scale = target.ld_loc, target.ld_scale
    cfg = np.array([p.weak_sd, p.s1_sd, p.sigma_scale, target.log_tau_lo, target.log_tau_hi,
                    float(p.tau_fixed) if p.tau_fixed is not None else -1.0])
    lay = np.array([_VARIANT_CODE[p.variant], int(not target.continuous),
                    -1 if target.i_sigma is None else target.i_sigma,
                    -1 if target.i_s1 is None else int(target.i_s1[0]),
                    -1 if target.i_tau is None else target.i_tau, target.n_tau], dtype=np.int64)
    return (_stats_table(target.c2), _stats_table(target.c1), X_ARM, X_CELL, cfg, target.weak_mean,
            ld_loc, ld_scale, target.s1_mean, target.tau_grid,
            target.log_w if target.log_w is not None else np.zeros(1), lay, SHARED_IDX, NEW_IDX)


def compiled_log_target(state_z: np.ndarray, target: "_Target", h: int = 0) -> float:
    """Sampler-scale log target of one flat state (exposed for testing)."""
    return float(_nb_log_target(np.ascontiguousarray(state_z, dtype=float), h, _pack(target)))


def _initial_state(target: "_Target", fits_c2, fits_c1, n_chains, gen) -> Tuple[np.ndarray, np.ndarray]:
    r2, o2 = fits_c2
    mle = np.concatenate([r2.coef, o2.coef])
    cov = np.zeros((target.dim, target.dim))
    cov[:3, :3] = r2.cov
    cov[3:N_COEF, 3:N_COEF] = o2.cov
    chol = np.linalg.cholesky(cov[:N_COEF, :N_COEF] + 1e-12 * np.eye(N_COEF))
    z = np.zeros((n_chains, target.dim))
    z[:, :N_COEF] = mle + gen.standard_normal((n_chains, N_COEF)) @ chol.T
    if target.continuous:
        sd2 = 1.0 / (2.0 * max(target.c2.n_outcome, 2))
        z[:, target.i_sigma] = math.log(o2.dispersion) + math.sqrt(sd2) * gen.standard_normal(n_chains)
        cov[target.i_sigma, target.i_sigma] = sd2
    if target.i_s1 is not None:
        r1, o1 = fits_c1
        labels1 = r1.labels + o1.labels
        order = [labels1.index(s) for s in SHARED_LABELS]
        c1cov = np.zeros((len(labels1), len(labels1)))
        c1cov[:len(r1.labels), :len(r1.labels)] = r1.cov
        c1cov[len(r1.labels):, len(r1.labels):] = o1.cov
        c1cov = c1cov[np.ix_(order, order)]
        s1_mle = np.concatenate([r1.coef, o1.coef])[order]
        z[:, target.i_s1] = s1_mle + gen.standard_normal((n_chains, len(order))) @ np.linalg.cholesky(
            c1cov + 1e-12 * np.eye(len(order))).T
        cov[np.ix_(target.i_s1, target.i_s1)] = c1cov
    if target.i_tau is not None:
        for b in range(target.n_tau):
            z[:, target.i_tau + b] = gen.uniform(-1.0, 1.0, n_chains)
            cov[target.i_tau + b, target.i_tau + b] = 1.0
    return z, cov


def sample_posterior(data_c1: Optional[TrialDataset], data_c2: TrialDataset, prior: PriorSpec,
                     config: SamplerConfig = SamplerConfig()) -> PosteriorDraws:
    """Adaptive random-walk Metropolis-within-Gibbs draws of the BIG posterior.

    Blocks: shared coefficients, new-arm coefficients, log sigma, c1
    coefficients, log tau; the commP component indicator is redrawn from its
    full conditional every sweep. Chains start from the MLE perturbed by its
    sampling covariance, which also seeds the proposal covariances. A
    :class:`ConvergenceWarning` is issued (and ``diagnostics.converged`` is
    False) when any coefficient has split R-hat above 1.05.
    """
    if data_c2 is None or len(data_c2) == 0:
        raise DataError("cohort c2 data is empty")
    if prior.commensurate and (data_c1 is None or len(data_c1) == 0):
        raise DataError("prior source cohort missing: commensurate priors need cohort c1 data")
    stats_c2 = CellStats.from_dataset(data_c2)
    stats_c1 = CellStats.from_dataset(data_c1) if data_c1 is not None and len(data_c1) else None
    target = _Target(stats_c1, stats_c2, prior)
    fits_c2 = glm.fit_models(data_c2, Cohort.C2)
    fits_c1 = glm.fit_models(data_c1, Cohort.C1) if target.i_s1 is not None else None
    gen = rngmod.stream(config.seed, rngmod.SAMPLER)
    z0, init_cov = _initial_state(target, fits_c2, fits_c1, config.chains, gen)
    blocks = [Block("theta_s", SHARED_IDX), Block("theta_ns", NEW_IDX)]
    if target.continuous:
        blocks.append(Block("log_sigma", [target.i_sigma]))
    if target.i_s1 is not None:
        blocks.append(Block("theta_s1", target.i_s1))
    if target.i_tau is not None:
        blocks.append(Block("log_tau", np.arange(target.i_tau, target.i_tau + target.n_tau)))
    # The shared and new-arm blocks are strongly correlated (both enter the
    # a13 cell means), so a joint move over every coordinate follows them.
    blocks.append(Block("joint", np.arange(target.dim)))
    h0 = update = None
    if prior.variant == "commP":
        h0 = gen.integers(0, len(prior.tau_grid), config.chains)
        update = _nb_update_h
    out = adaptive_mwg(_nb_log_target, _pack(target), z0, blocks, init_cov, config.burn_in,
                       config.per_chain, gen, aux0=h0, aux_update=update, thin=config.thin)
    s = out.samples  # (chains, per_chain, dim)
    flat = s.reshape(-1, target.dim)
    rhat = {lab: split_rhat(s[:, :, i]) for i, lab in enumerate(COEF_LABELS)}
    ess = {lab: effective_sample_size(s[:, :, i]) for i, lab in enumerate(COEF_LABELS)}
    if target.continuous:
        rhat["sigma"] = split_rhat(s[:, :, target.i_sigma])
        ess["sigma"] = effective_sample_size(s[:, :, target.i_sigma])
    diag = SamplerDiagnostics(out.acceptance, out.burn_acceptance, rhat, ess, config.chains, config.per_chain)
    if not diag.converged:
        worst = max(rhat, key=lambda k: rhat[k])
        warnings.warn(f"split R-hat {rhat[worst]:.3f} for {worst} exceeds {RHAT_LIMIT}", ConvergenceWarning,
                      stacklevel=2)
    tau = None
    if prior.variant == "commP":
        h = out.aux.reshape(-1)
        tau = target.tau_grid[h]
    else:
        h = None
        if target.i_tau is not None:
            tau = np.exp(flat[:, target.i_tau:target.i_tau + target.n_tau])
            if target.n_tau == 1:
                tau = tau[:, 0]
        elif prior.commensurate:
            tau = np.full(len(flat), float(prior.tau_fixed))
    return PosteriorDraws(
        outcome=stats_c2.outcome, prior=prior, coef=flat[:, :N_COEF].copy(),
        sigma=np.exp(flat[:, target.i_sigma]) if target.continuous else None,
        theta_s1=flat[:, target.i_s1].copy() if target.i_s1 is not None else None,
        tau=tau, h=h, diagnostics=diag)


def _cell_index(j: int, k: int) -> int:
    return CELLS.index((j, k))


def dtr_components(coef: np.ndarray, dtr: Dtr, outcome: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Response probability and the responder / non-responder sequence means."""
    coef = np.atleast_2d(coef)
    pi = expit(coef[:, :3] @ X_ARM[dtr.first - 1])
    m_r = coef[:, 3:] @ X_CELL[_cell_index(dtr.first, dtr.second_on_response)]
    m_nr = coef[:, 3:] @ X_CELL[_cell_index(dtr.first, CONTINUE)]
    if outcome == "binary":
        m_r, m_nr = expit(m_r), expit(m_nr)
    return pi, m_r, m_nr


def gformula_dtr_draws(draws: PosteriorDraws, dtr: Dtr, N: Optional[int] = None, seed: int = 0,
                       chunk_elems: int = 4_000_000) -> np.ndarray:
    """Posterior draws of the mean outcome under ``dtr``.

    With ``N`` set, each draw simulates ``N`` participants who follow the
    regime (response from the response model, outcome from the outcome
    model) and averages their outcomes. ``N=None`` uses the exact expectation
    pi * m_resp + (1 - pi) * m_nonresp of that simulation.
    """
    pi, m_r, m_nr = dtr_components(draws.coef, dtr, draws.outcome)
    if N is None:
        return pi * m_r + (1.0 - pi) * m_nr
    if N < 1:
        raise ValueError("N must be >= 1")
    gen = rngmod.stream(seed, rngmod.GFORMULA, dtr.first, dtr.second_on_response)
    M = len(pi)
    out = np.empty(M)
    step = max(1, chunk_elems // N)
    for start in range(0, M, step):
        sl = slice(start, min(M, start + step))
        R = gen.random((sl.stop - sl.start, N)) < pi[sl, None]
        mean = np.where(R, m_r[sl, None], m_nr[sl, None])
        if draws.outcome == "binary":
            Y = gen.random(mean.shape) < mean
        else:
            Y = mean + draws.sigma[sl, None] * gen.standard_normal(mean.shape)
        out[sl] = Y.mean(axis=1)
    return out


@dataclass
class DtrPosterior:
    draws: Dict[Dtr, np.ndarray]

    def __getitem__(self, dtr: Dtr) -> np.ndarray:
        return self.draws[dtr]

    def mean(self, dtr: Dtr) -> float:
        return float(self.draws[dtr].mean())

    def var(self, dtr: Dtr) -> float:
        return float(self.draws[dtr].var(ddof=1))

    def ci(self, dtr: Dtr, level: float = 0.95) -> Tuple[float, float]:
        a = (1 - level) / 2
        lo, hi = np.quantile(self.draws[dtr], [a, 1 - a])
        return float(lo), float(hi)

    def diff_draws(self, a: Dtr, b: Dtr) -> np.ndarray:
        return self.draws[a] - self.draws[b]


def posterior_dtr_means(draws: PosteriorDraws, dtrs: Iterable[Dtr] = ALL_DTRS, N: Optional[int] = None,
                        seed: int = 0) -> DtrPosterior:
    return DtrPosterior({d: gformula_dtr_draws(draws, d, N, seed) for d in dtrs})


@dataclass
class EstimandSummary:
    mean: Dict[Dtr, float]
    var: Dict[Dtr, float]
    ci: Dict[Dtr, Tuple[float, float]]
    diff: Dict[Tuple[Dtr, Dtr], Tuple[float, float, Tuple[float, float]]] = field(default_factory=dict)


def summarize_estimands(posterior: DtrPosterior, pairs: Sequence[Tuple[Dtr, Dtr]] = (),
                        level: float = 0.95) -> EstimandSummary:
    """Posterior means, variances (ddof=1), equal-tailed intervals, and the
    same for paired differences computed draw by draw."""
    lengths = {len(v) for v in posterior.draws.values()}
    if len(lengths) > 1:
        raise MisalignedError(f"DTR draw vectors differ in length: {sorted(lengths)}")
    if lengths and lengths.pop() < 2:
        raise MisalignedError("need at least two draws")
    mean = {d: posterior.mean(d) for d in posterior.draws}
    var = {d: posterior.var(d) for d in posterior.draws}
    ci = {d: posterior.ci(d, level) for d in posterior.draws}
    a_ = (1 - level) / 2
    diff = {}
    for a, b in pairs:
        dd = posterior.diff_draws(a, b)
        lo, hi = np.quantile(dd, [a_, 1 - a_])
        diff[(a, b)] = (float(dd.mean()), float(dd.var(ddof=1)), (float(lo), float(hi)))
    return EstimandSummary(mean, var, ci, diff)


@dataclass
class BigResult:
    approach: str
    draws: PosteriorDraws
    posterior: DtrPosterior
    summary: EstimandSummary


def fit_big(data: TrialDataset, approach: str, config: SamplerConfig = SamplerConfig(),
            pairs: Sequence[Tuple[Dtr, Dtr]] = ((Dtr(1, 1), Dtr(3, 1)),),
            gformula_n: Optional[int] = None, **prior_kw) -> BigResult:
    """Run one BIG analysis (``approach`` in BIGweak/BIGlogdis/BIGcomP/BIGcommP)."""
    variant = APPROACH_VARIANT.get(approach, approach)
    if variant != "weak" and data.cohort_size(Cohort.C1) == 0:
        raise DataError(f"prior source cohort missing: {approach} needs cohort c1 data")
    prior = make_prior(variant, data, **prior_kw)
    c1 = data.subset(Cohort.C1) if prior.commensurate else None
    draws = sample_posterior(c1, data.subset(Cohort.C2), prior, config)
    post = posterior_dtr_means(draws, ALL_DTRS, gformula_n, rngmod.derive_seed(config.seed, rngmod.GFORMULA))
    return BigResult(approach, draws, post, summarize_estimands(post, pairs))


def draws_csv(draws: PosteriorDraws, posterior: Optional[DtrPosterior] = None) -> str:
    cols = draws.columns()
    if posterior is not None:
        cols.update({f"mu_{d.label}": v for d, v in posterior.draws.items()})
    names = list(cols)
    lines = [",".join(names)]
    arrays = [np.asarray(cols[n]) for n in names]
    for m in range(draws.M):
        lines.append(",".join(repr(float(a[m])) if a.dtype.kind == "f" else str(int(a[m])) for a in arrays))
    return "\n".join(lines) + "\n"
