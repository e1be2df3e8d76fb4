"""Vocabulary of the two-stage platform SMART and its analytic ground truths.

Stage-1 arms are indexed ``j in {1, 2, 3}`` (``a13`` is the arm added at the
adaptation point), stage-2 arms for responders ``k in {1, 2}``. A treatment
sequence is keyed ``(j, k)``; ``k == 0`` stands for "continue ``a1j``", which
is what every non-responder receives.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, Mapping, Optional, Tuple

from .errors import InvalidDesignError, MissingParameterError, UnreachableDtrError

CONTINUE = 0
STAGE1_ARMS = (1, 2, 3)
STAGE2_ARMS = (1, 2)
TIE_TOL = 1e-12


class Cohort(str, enum.Enum):
    C1 = "c1"
    C2 = "c2"

    @property
    def number(self) -> int:
        return 1 if self is Cohort.C1 else 2

    @property
    def arms(self) -> Tuple[int, ...]:
        return (1, 2) if self is Cohort.C1 else STAGE1_ARMS

    @classmethod
    def parse(cls, value) -> "Cohort":
        if isinstance(value, Cohort):
            return value
        if value in (1, "1"):
            return cls.C1
        if value in (2, "2"):
            return cls.C2
        return cls(str(value).strip().lower())


@dataclass(frozen=True, order=True)
class TreatmentId:
    stage: int
    index: int

    def __post_init__(self):
        allowed = STAGE1_ARMS if self.stage == 1 else STAGE2_ARMS if self.stage == 2 else ()
        if self.index not in allowed:
            raise ValueError(f"no treatment a{self.stage}{self.index}")

    @property
    def label(self) -> str:
        return f"a{self.stage}{self.index}"

    @classmethod
    def parse(cls, label: str) -> "TreatmentId":
        label = label.strip().lower()
        if len(label) != 3 or label[0] != "a":
            raise ValueError(f"bad treatment label {label!r}")
        return cls(int(label[1]), int(label[2]))

    def available_in(self, cohort: Cohort) -> bool:
        return self.stage == 2 or self.index in cohort.arms


@dataclass(frozen=True, order=True)
class Dtr:
    """Embedded regime d_jk: start on a1j, stay on it after non-response,
    switch to a2k after response."""

    first: int
    second_on_response: int

    def __post_init__(self):
        if self.first not in STAGE1_ARMS or self.second_on_response not in STAGE2_ARMS:
            raise ValueError(f"no embedded DTR d{self.first}{self.second_on_response}")

    @property
    def label(self) -> str:
        return f"d{self.first}{self.second_on_response}"

    @classmethod
    def parse(cls, label: str) -> "Dtr":
        label = label.strip().lower()
        if len(label) != 3 or label[0] != "d":
            raise ValueError(f"bad DTR label {label!r}")
        return cls(int(label[1]), int(label[2]))

    def reachable_in(self, cohort: Cohort) -> bool:
        return self.first in cohort.arms

    def __str__(self):
        return self.label


ALL_DTRS = tuple(Dtr(j, k) for j in STAGE1_ARMS for k in STAGE2_ARMS)


def dtrs_in(cohort: Cohort) -> Tuple[Dtr, ...]:
    return tuple(d for d in ALL_DTRS if d.reachable_in(cohort))


def sequence_label(j: int, k: int) -> str:
    """``(1, 0) -> 'a11_a11'``, ``(1, 2) -> 'a11_a22'``."""
    return f"a1{j}_a1{j}" if k == CONTINUE else f"a1{j}_a2{k}"


def parse_sequence_label(label: str) -> Tuple[int, int]:
    first, second = label.strip().lower().split("_")
    t1, t2 = TreatmentId.parse(first), TreatmentId.parse(second)
    if t1.stage != 1:
        raise ValueError(f"sequence {label!r} must start with a stage-1 arm")
    if t2.stage == 1:
        if t2.index != t1.index:
            raise ValueError(f"non-responders continue the initial arm, got {label!r}")
        return t1.index, CONTINUE
    return t1.index, t2.index


@dataclass(frozen=True)
class CohortParams:
    """Response rates and treatment-sequence means for one cohort.

    ``seq_mean`` maps ``(j, k)`` to the sequence mean (a probability for
    binary outcomes). ``seq_sd`` optionally overrides the scenario-wide
    outcome standard deviation per sequence.
    """

    response_rate: Mapping[int, float]
    seq_mean: Mapping[Tuple[int, int], float]
    seq_sd: Mapping[Tuple[int, int], float] = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioParams:
    name: str
    outcome: str  # "continuous" | "binary"
    cohorts: Mapping[Cohort, CohortParams]
    sigma: float = 2.0
    direction: str = "maximize"
    time_effect: Optional[str] = None

    def __post_init__(self):
        if self.outcome not in ("continuous", "binary"):
            raise InvalidDesignError(f"unknown outcome family {self.outcome!r}")
        if self.direction not in ("maximize", "minimize"):
            raise InvalidDesignError(f"unknown direction {self.direction!r}")
        if self.outcome == "continuous" and not self.sigma >= 0:
            raise InvalidDesignError("sigma must be non-negative")
        for cohort, params in self.cohorts.items():
            for j, pi in params.response_rate.items():
                if not 0.0 <= pi <= 1.0:
                    raise InvalidDesignError(f"response rate a1{j} in {cohort.value} outside [0, 1]")
            if self.outcome == "binary":
                for key, m in params.seq_mean.items():
                    if not 0.0 <= m <= 1.0:
                        raise InvalidDesignError(
                            f"binary mean {sequence_label(*key)} in {cohort.value} outside [0, 1]")

    def cohort(self, cohort: Cohort) -> CohortParams:
        try:
            return self.cohorts[Cohort.parse(cohort)]
        except KeyError:
            raise MissingParameterError(f"scenario {self.name!r} has no parameters for {cohort}") from None

    def response_rate(self, cohort: Cohort, j: int) -> float:
        try:
            return float(self.cohort(cohort).response_rate[j])
        except KeyError:
            raise MissingParameterError(
                f"scenario {self.name!r}: response_rate.a1{j}.{Cohort.parse(cohort).value} missing") from None

    def seq_mean(self, cohort: Cohort, j: int, k: int) -> float:
        try:
            return float(self.cohort(cohort).seq_mean[(j, k)])
        except KeyError:
            raise MissingParameterError(
                f"scenario {self.name!r}: seq_mean.{sequence_label(j, k)}.{Cohort.parse(cohort).value} missing"
            ) from None

    def seq_sd(self, cohort: Cohort, j: int, k: int) -> float:
        """Outcome SD of a sequence; for binary outcomes the Bernoulli SD."""
        if self.outcome == "binary":
            m = self.seq_mean(cohort, j, k)
            return math.sqrt(m * (1.0 - m))
        return float(self.cohort(cohort).seq_sd.get((j, k), self.sigma))

    def with_sigma(self, sigma: float) -> "ScenarioParams":
        return ScenarioParams(self.name, self.outcome, self.cohorts, sigma, self.direction, self.time_effect)


@dataclass(frozen=True)
class DtrTruth:
    dtr: Dtr
    cohort: Cohort
    mean: float


def true_dtr_mean(scenario: ScenarioParams, cohort, dtr: Dtr) -> float:
    """pi_j * mu(a1j -> a2k) + (1 - pi_j) * mu(a1j -> a1j) for the cohort."""
    cohort = Cohort.parse(cohort)
    if not dtr.reachable_in(cohort):
        raise UnreachableDtrError(f"{dtr.label} is not available in cohort {cohort.value}")
    pi = scenario.response_rate(cohort, dtr.first)
    m_resp = scenario.seq_mean(cohort, dtr.first, dtr.second_on_response)
    m_cont = scenario.seq_mean(cohort, dtr.first, CONTINUE)
    return pi * m_resp + (1.0 - pi) * m_cont


def dtr_truths(scenario: ScenarioParams, cohort) -> Dict[Dtr, DtrTruth]:
    cohort = Cohort.parse(cohort)
    return {d: DtrTruth(d, cohort, true_dtr_mean(scenario, cohort, d)) for d in dtrs_in(cohort)}


def select_optimal(means: Mapping[Dtr, float], direction: str = "maximize",
                   tol: Optional[float] = None) -> Optional[Dtr]:
    """Arg-extremum over ``means``; lowest (j, k) wins ties.

    With ``tol`` set, returns None when every mean lies within ``tol`` of
    the others (no unique optimum).
    """
    if not means:
        return None
    order = sorted(means)
    values = [means[d] for d in order]
    if tol is not None and max(values) - min(values) <= tol * max(1.0, max(abs(v) for v in values)):
        return None
    sign = 1.0 if direction == "maximize" else -1.0
    best = order[0]
    for d in order[1:]:
        if sign * (means[d] - means[best]) > 0:
            best = d
    return best


def optimal_dtr(scenario: ScenarioParams, cohort, direction: Optional[str] = None) -> Optional[Dtr]:
    direction = direction or scenario.direction
    means = {d: t.mean for d, t in dtr_truths(scenario, cohort).items()}
    return select_optimal(means, direction, tol=TIE_TOL)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def largest_remainder(quotas, total: int) -> Tuple[int, ...]:
    """Integer apportionment of ``quotas`` summing to ``total``; ties go to
    the earlier entry."""
    floors = [int(math.floor(q + 1e-9)) for q in quotas]
    short = total - sum(floors)
    rema = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - floors[i]), i))
    for i in rema[:max(short, 0)]:
        floors[i] += 1
    return tuple(floors)


@dataclass(frozen=True)
class TrialDesign:
    """Planned size ``n`` of the original SMART and adaptation ratio ``r = n1/n``.

    ``q`` holds the responder re-randomization probability of ``a21`` per
    cohort (``a22`` gets the complement). ``allocation`` is ``"fixed"``
    (exact arm counts, shuffled) or ``"bernoulli"`` (independent draws).
    """

    n: int
    r: float
    q: Tuple[float, float] = (0.5, 0.5)
    allocation: str = "fixed"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise InvalidDesignError(f"n must be an integer >= 2, got {self.n}")
        if not 0.0 <= self.r < 1.0:
            raise InvalidDesignError(f"r must lie in [0, 1), got {self.r}")
        if any(not 0.0 < qk < 1.0 for qk in self.q):
            raise InvalidDesignError(f"stage-2 probabilities must lie in (0, 1), got {self.q}")
        if self.allocation not in ("fixed", "bernoulli"):
            raise InvalidDesignError(f"unknown allocation mode {self.allocation!r}")
        for cohort, counts in self.arm_counts().items():
            if sum(counts.values()) > 0 and min(counts.values()) < 1:
                raise InvalidDesignError(
                    f"design n={self.n}, r={self.r} leaves an empty arm in {cohort.value}: {counts}")

    @property
    def n1(self) -> int:
        return _round_half_up(self.r * self.n)

    def _quotas(self, cohort: Cohort):
        if cohort is Cohort.C1:
            return [self.n1 / 2, self.n1 / 2]
        return [(self.n - self.n1) / 2, (self.n - self.n1) / 2, self.n / 2]

    def arm_counts(self) -> Dict[Cohort, Dict[int, int]]:
        out = {}
        for cohort in Cohort:
            quotas = self._quotas(cohort)
            counts = largest_remainder(quotas, _round_half_up(sum(quotas)))
            out[cohort] = dict(zip(cohort.arms, counts))
        return out

    def cohort_size(self, cohort) -> int:
        return sum(self.arm_counts()[Cohort.parse(cohort)].values())

    def stage1_probs(self, cohort) -> Dict[int, float]:
        cohort = Cohort.parse(cohort)
        quotas = self._quotas(cohort)
        total = sum(quotas)
        if total <= 0:
            return {j: 0.0 for j in cohort.arms}
        return {j: qj / total for j, qj in zip(cohort.arms, quotas)}

    def stage2_prob(self, cohort, k: int) -> float:
        q1 = self.q[Cohort.parse(cohort).number - 1]
        return q1 if k == 1 else 1.0 - q1

    @property
    def total_size(self) -> int:
        return sum(self.cohort_size(c) for c in Cohort)


@dataclass(frozen=True)
class AllocationPlan:
    counts: Dict[Cohort, Dict[int, int]]
    stage1_probs: Dict[Cohort, Dict[int, float]]
    stage2_probs: Dict[Cohort, Dict[int, float]]

    def arm_totals(self) -> Dict[int, int]:
        tot = {j: 0 for j in STAGE1_ARMS}
        for counts in self.counts.values():
            for j, c in counts.items():
                tot[j] += c
        return tot

    def __iter__(self) -> Iterator[Cohort]:
        return iter(self.counts)


def allocation_plan(design: TrialDesign) -> AllocationPlan:
    counts = design.arm_counts()
    return AllocationPlan(
        counts=counts,
        stage1_probs={c: design.stage1_probs(c) for c in Cohort},
        stage2_probs={c: {k: design.stage2_prob(c, k) for k in STAGE2_ARMS} for c in Cohort},
    )
