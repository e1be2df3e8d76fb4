"""Response and outcome GLMs: design rows, likelihoods, maximum likelihood.

Response model:  logit P(R=1) = b0 + b1 I(a12) + b2 I(a13)
Outcome model:   R  * (r0 + r1 I(a12) + r2 I(a13) + r3 I(a22) + r4 I(a12)I(a22) + r5 I(a13)I(a22))
               + (1-R) * (nr0 + nr1 I(a12) + nr2 I(a13))
with identity link (Gaussian errors) or logit link (binary outcome).
Columns involving a13 are dropped when the data cannot contain that arm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from .datagen import TrialDataset
from .errors import NonConvergenceError, RankDeficientError
from .trial import Cohort

RESPONSE_LABELS = ("beta0", "beta1", "beta2")
OUTCOME_LABELS = ("psi_r0", "psi_r1", "psi_r2", "psi_r3", "psi_r4", "psi_r5",
                  "psi_nr0", "psi_nr1", "psi_nr2")
NEW_ARM_LABELS = frozenset({"beta2", "psi_r2", "psi_r5", "psi_nr2"})
INTERCEPTS = frozenset({"beta0", "psi_r0", "psi_nr0"})

SIGMA_MIN = 1e-6
RIDGE = 1e-4
GRAD_TOL = 1e-8
MAX_ITER = 100
# |eta| beyond this means a fitted probability within ~3e-7 of 0 or 1, which a
# saturated model only reaches when a cell is all-0 or all-1 (separation).
SEPARATION_ETA = 15.0
_LOG2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class ModelSpec:
    kind: str  # "response-logistic" | "outcome-linear" | "outcome-logistic"
    include_new_arm: bool = True

    def __post_init__(self):
        if self.kind not in ("response-logistic", "outcome-linear", "outcome-logistic"):
            raise ValueError(f"unknown model kind {self.kind!r}")

    @property
    def all_labels(self) -> Tuple[str, ...]:
        return RESPONSE_LABELS if self.kind == "response-logistic" else OUTCOME_LABELS

    @property
    def labels(self) -> Tuple[str, ...]:
        if self.include_new_arm:
            return self.all_labels
        return tuple(lab for lab in self.all_labels if lab not in NEW_ARM_LABELS)

    @property
    def logistic(self) -> bool:
        return self.kind != "outcome-linear"

    def column_index(self) -> np.ndarray:
        full = self.all_labels
        return np.array([full.index(lab) for lab in self.labels])

    def design_row(self, a1: int, r: int, a2: int) -> np.ndarray:
        one = TrialDataset([1], [a1], [r], [a2], [0.0])
        return self.design_matrix(one)[0]

    def design_matrix(self, data: TrialDataset) -> np.ndarray:
        i2 = (data.a1 == 2).astype(float)
        i3 = (data.a1 == 3).astype(float)
        if self.kind == "response-logistic":
            X = np.column_stack([np.ones(len(data)), i2, i3])
        else:
            r = data.r.astype(float)
            s22 = (data.a2 == 2).astype(float)
            X = np.column_stack([
                r, r * i2, r * i3, r * s22, r * i2 * s22, r * i3 * s22,
                1 - r, (1 - r) * i2, (1 - r) * i3,
            ])
        return X[:, self.column_index()]

    def target(self, data: TrialDataset) -> np.ndarray:
        return data.r.astype(float) if self.kind == "response-logistic" else data.y


def response_spec(include_new_arm=True) -> ModelSpec:
    return ModelSpec("response-logistic", include_new_arm)


def outcome_spec(outcome: str, include_new_arm=True) -> ModelSpec:
    return ModelSpec("outcome-linear" if outcome == "continuous" else "outcome-logistic", include_new_arm)


@dataclass(frozen=True)
class MleFit:
    kind: str
    labels: Tuple[str, ...]
    coef: np.ndarray
    cov: np.ndarray
    dispersion: Optional[float]
    n: int
    iterations: int
    grad_norm: float
    ridge: bool = False

    def __getitem__(self, label: str) -> float:
        return float(self.coef[self.labels.index(label)])

    def var(self, label: str) -> float:
        i = self.labels.index(label)
        return float(self.cov[i, i])

    def report(self) -> str:
        lines = [f"{self.kind}: n={self.n} iterations={self.iterations} "
                 f"|grad|={self.grad_norm:.3g}{' ridge-stabilized' if self.ridge else ''}"]
        for i, lab in enumerate(self.labels):
            lines.append(f"  {lab:8s} {self.coef[i]: .6f}  se {math.sqrt(self.cov[i, i]):.6f}")
        if self.dispersion is not None:
            lines.append(f"  sigma    {self.dispersion:.6f}")
        return "\n".join(lines)


def _select(data: TrialDataset, cohort) -> TrialDataset:
    return data if cohort is None else data.subset(cohort)


def log_likelihood(data: TrialDataset, spec: ModelSpec, coefficients, dispersion: Optional[float] = None,
                   cohort=None) -> Tuple[float, np.ndarray]:
    """Exact log-likelihood and its gradient with respect to the coefficients.

    Gaussian models need ``dispersion`` (the SD); ``dispersion <= 0`` gives
    ``-inf``.
    """
    data = _select(data, cohort)
    beta = np.asarray(coefficients, dtype=float)
    if len(beta) != len(spec.labels):
        raise ValueError(f"expected {len(spec.labels)} coefficients, got {len(beta)}")
    if len(data) == 0:
        return 0.0, np.zeros_like(beta)
    X = spec.design_matrix(data)
    y = spec.target(data)
    eta = X @ beta
    if spec.logistic:
        ll = float(y @ eta - np.logaddexp(0.0, eta).sum())
        return ll, X.T @ (y - expit(eta))
    if dispersion is None:
        raise ValueError("Gaussian likelihood needs a dispersion")
    if dispersion <= 0:
        return -math.inf, np.zeros_like(beta)
    s2 = dispersion ** 2
    res = y - eta
    ll = -0.5 * len(y) * (_LOG2PI + math.log(s2)) - 0.5 * float(res @ res) / s2
    return ll, X.T @ res / s2


def _newton_logistic(X, y, penalty):
    beta = np.zeros(X.shape[1])
    grad_norm = math.inf
    for it in range(1, MAX_ITER + 1):
        eta = X @ beta
        p = expit(eta)
        grad = X.T @ (y - p) - penalty * beta
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < GRAD_TOL:
            return beta, it - 1, grad_norm, True
        W = p * (1 - p)
        H = (X * W[:, None]).T @ X + np.diag(penalty)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            return beta, it, grad_norm, False
        # Step halving keeps the penalized likelihood monotone.
        base = y @ eta - np.logaddexp(0, eta).sum() - 0.5 * penalty @ beta**2
        t = 1.0
        while t > 1e-8:
            cand = beta + t * step
            ce = X @ cand
            val = y @ ce - np.logaddexp(0, ce).sum() - 0.5 * penalty @ cand**2
            if val >= base - 1e-12 * abs(base):
                break
            t /= 2
        beta = beta + t * step
        if np.max(np.abs(t * step)) < 1e-13 * max(1.0, np.max(np.abs(beta))):
            grad = X.T @ (y - expit(X @ beta)) - penalty * beta
            grad_norm = float(np.linalg.norm(grad))
            # Stalled at machine precision; rounding in X'(y - p) grows with n.
            return beta, it, grad_norm, grad_norm < 1e-9 * max(1, len(y))
    return beta, MAX_ITER, grad_norm, False


def fit_mle(data: TrialDataset, spec: ModelSpec, cohort=None) -> MleFit:
    """Maximum likelihood fit with inverse-information covariance.

    Logistic models use Newton/IRLS to |gradient| < 1e-8. Separation
    (diverging linear predictors or no convergence) triggers a refit with a
    ridge penalty of 1e-4 on the non-intercept coefficients; the returned
    fit is then flagged ``ridge=True``. Linear models use least squares with
    sigma^2 = RSS / (n - p), floored at 1e-6.
    """
    data = _select(data, cohort)
    X = spec.design_matrix(data)
    y = spec.target(data)
    n, p = X.shape
    if n == 0 or np.linalg.matrix_rank(X) < p:
        raise RankDeficientError(
            f"{spec.kind} design is rank deficient (n={n}, p={p}); is every arm/sequence observed?")
    if not spec.logistic:
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        res = y - X @ beta
        s2 = float(res @ res) / max(n - p, 1)
        sigma = max(math.sqrt(s2), SIGMA_MIN)
        cov = sigma**2 * np.linalg.inv(X.T @ X)
        grad = X.T @ res / sigma**2
        return MleFit(spec.kind, spec.labels, beta, cov, sigma, n, 1, float(np.linalg.norm(grad)))
    zero = np.zeros(p)
    beta, it, gnorm, ok = _newton_logistic(X, y, zero)
    ridge = False
    if not ok or np.max(np.abs(X @ beta)) > SEPARATION_ETA:
        pen = np.array([0.0 if lab in INTERCEPTS else RIDGE for lab in spec.labels])
        beta, it, gnorm, ok = _newton_logistic(X, y, pen)
        ridge = True
        if not ok:
            raise NonConvergenceError(f"{spec.kind} fit did not converge (|grad|={gnorm:.3g})")
    else:
        pen = zero
    W = expit(X @ beta)
    W = W * (1 - W)
    cov = np.linalg.inv((X * W[:, None]).T @ X + np.diag(pen))
    return MleFit(spec.kind, spec.labels, beta, 0.5 * (cov + cov.T), None, n, it, gnorm, ridge)


def fit_models(data: TrialDataset, cohort, outcome: Optional[str] = None) -> Tuple[MleFit, MleFit]:
    """Response and outcome fits for one cohort (a13 columns only in c2)."""
    cohort = Cohort.parse(cohort)
    include = cohort is Cohort.C2
    outcome = outcome or data.outcome
    return (fit_mle(data, response_spec(include), cohort),
            fit_mle(data, outcome_spec(outcome, include), cohort))
