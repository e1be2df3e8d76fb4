"""Participant-level platform SMART data: simulation, summaries, CSV round trip."""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from . import rng as rngmod
from .errors import DataError
from .trial import (CONTINUE, STAGE2_ARMS, Cohort, ScenarioParams, TrialDesign,
                    allocation_plan)

CSV_COLUMNS = ("cohort", "a1", "r", "a2", "y")


@dataclass(frozen=True)
class ParticipantRecord:
    cohort: Cohort
    a1: int
    r: int
    a2: int  # CONTINUE (0) for non-responders
    y: float

    def a2_label(self) -> str:
        return f"a1{self.a1}" if self.a2 == CONTINUE else f"a2{self.a2}"


@dataclass(eq=False)
class TrialDataset:
    """Column store of participant records.

    ``cohort`` holds 1/2, ``a2`` holds 0 for continuation of ``a1``.
    ``design`` is None for data read from CSV; estimators then fall back to
    realized allocation frequencies.
    """

    cohort: np.ndarray
    a1: np.ndarray
    r: np.ndarray
    a2: np.ndarray
    y: np.ndarray
    outcome: str = "continuous"
    design: Optional[TrialDesign] = None
    seed: Optional[int] = None
    scenario: Optional[str] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cohort = np.asarray(self.cohort, dtype=np.int8)
        self.a1 = np.asarray(self.a1, dtype=np.int8)
        self.r = np.asarray(self.r, dtype=np.int8)
        self.a2 = np.asarray(self.a2, dtype=np.int8)
        self.y = np.asarray(self.y, dtype=float)
        n = len(self.cohort)
        if any(len(a) != n for a in (self.a1, self.r, self.a2, self.y)):
            raise DataError("dataset columns differ in length")

    def __len__(self):
        return len(self.y)

    def __eq__(self, other):
        if not isinstance(other, TrialDataset):
            return NotImplemented
        return (self.outcome == other.outcome
                and all(np.array_equal(getattr(self, c), getattr(other, c)) for c in CSV_COLUMNS))

    def records(self) -> Iterator[ParticipantRecord]:
        for c, a1, r, a2, y in zip(self.cohort, self.a1, self.r, self.a2, self.y):
            yield ParticipantRecord(Cohort.parse(int(c)), int(a1), int(r), int(a2), float(y))

    def subset(self, cohort) -> "TrialDataset":
        mask = self.cohort == Cohort.parse(cohort).number
        return TrialDataset(self.cohort[mask], self.a1[mask], self.r[mask], self.a2[mask], self.y[mask],
                            self.outcome, self.design, self.seed, self.scenario, dict(self.provenance))

    def cohort_size(self, cohort) -> int:
        return int(np.count_nonzero(self.cohort == Cohort.parse(cohort).number))

    def cohorts_present(self) -> Tuple[Cohort, ...]:
        return tuple(c for c in Cohort if self.cohort_size(c) > 0)

    def stage1_probs(self, cohort, realized: bool = False) -> Dict[int, float]:
        """Nominal design probabilities, or realized arm frequencies when the
        design is unknown or ``realized`` is requested."""
        cohort = Cohort.parse(cohort)
        if self.design is not None and not realized:
            return self.design.stage1_probs(cohort)
        sel = self.cohort == cohort.number
        total = np.count_nonzero(sel)
        return {j: (np.count_nonzero(sel & (self.a1 == j)) / total if total else 0.0) for j in cohort.arms}

    def stage2_prob(self, cohort, j: int, k: int, realized: bool = False) -> float:
        cohort = Cohort.parse(cohort)
        if self.design is not None and not realized:
            return self.design.stage2_prob(cohort, k)
        # Unknown design: q is pooled over all responders of the cohort.
        sel = (self.cohort == cohort.number) & (self.r == 1)
        if realized:
            sel &= self.a1 == j
        total = np.count_nonzero(sel)
        return np.count_nonzero(sel & (self.a2 == k)) / total if total else 0.5


def simulate_trial(design: TrialDesign, scenario: ScenarioParams, seed: int,
                   path: Tuple[int, ...] = ()) -> TrialDataset:
    """Simulate one platform SMART.

    Stage-1 arms get the exact ``allocation_plan`` counts in shuffled order
    (or independent categorical draws with ``design.allocation ==
    "bernoulli"``). Responses are Bernoulli(pi), each responder is
    re-randomized to a21 with probability q (else a22), non-responders
    continue a1. Outcomes are Normal(sequence
    mean, sd) or Bernoulli(sequence mean).

    Randomness comes from independent streams per (cohort, purpose) under
    ``(seed, *path)``, so the dataset is a pure function of its arguments.
    """
    plan = allocation_plan(design)
    cols = {c: [] for c in CSV_COLUMNS}
    for cohort in Cohort:
        size = sum(plan.counts[cohort].values())
        if size == 0:
            continue
        cn = cohort.number
        g_assign = rngmod.stream(seed, *path, cn, rngmod.ASSIGN)
        g_resp = rngmod.stream(seed, *path, cn, rngmod.RESPONSE)
        g_stage2 = rngmod.stream(seed, *path, cn, rngmod.STAGE2)
        g_out = rngmod.stream(seed, *path, cn, rngmod.OUTCOME)
        arms = np.array(cohort.arms, dtype=np.int8)
        if design.allocation == "fixed":
            a1 = np.repeat(arms, [plan.counts[cohort][j] for j in cohort.arms])
            g_assign.shuffle(a1)
        else:
            probs = np.array([plan.stage1_probs[cohort][j] for j in cohort.arms])
            a1 = g_assign.choice(arms, size=size, p=probs).astype(np.int8)
        pi_lut = np.zeros(4)
        for j in cohort.arms:
            pi_lut[j] = scenario.response_rate(cohort, j)
        pi = pi_lut[a1]
        r = (g_resp.random(size) < pi).astype(np.int8)
        a2 = np.zeros(size, dtype=np.int8)
        q1 = plan.stage2_probs[cohort][1]
        resp = np.flatnonzero(r == 1)
        a2[resp] = np.where(g_stage2.random(len(resp)) < q1, 1, 2)
        mean = np.empty(size)
        sd = np.empty(size)
        for j in cohort.arms:
            for k in (CONTINUE,) + STAGE2_ARMS:
                sel = (a1 == j) & (a2 == k)
                mean[sel] = scenario.seq_mean(cohort, j, k)
                if scenario.outcome == "continuous":
                    sd[sel] = scenario.seq_sd(cohort, j, k)
        if scenario.outcome == "continuous":
            y = mean + sd * g_out.standard_normal(size)
        else:
            y = (g_out.random(size) < mean).astype(float)
        cols["cohort"].append(np.full(size, cn, dtype=np.int8))
        cols["a1"].append(a1)
        cols["r"].append(r)
        cols["a2"].append(a2)
        cols["y"].append(y)
    arrays = {k: (np.concatenate(v) if v else np.zeros(0)) for k, v in cols.items()}
    return TrialDataset(**arrays, outcome=scenario.outcome, design=design, seed=seed,
                        scenario=scenario.name, provenance={"path": list(path)})


@dataclass(frozen=True)
class ArmSummary:
    n: int
    response_rate: Optional[float]
    seq_n: Dict[int, int]
    seq_mean: Dict[int, Optional[float]]
    seq_var: Dict[int, Optional[float]]


def empirical_summary(data: TrialDataset) -> Dict[Cohort, Dict[int, Optional[ArmSummary]]]:
    """Plug-in arm counts, response rates and per-sequence means/variances.

    Arms with no participants map to None; sequences with no participants
    have mean None (never 0/0).
    """
    if len(data) == 0:
        raise DataError("empirical_summary needs a nonempty dataset")
    out: Dict[Cohort, Dict[int, Optional[ArmSummary]]] = {}
    for cohort in Cohort:
        in_c = data.cohort == cohort.number
        arms: Dict[int, Optional[ArmSummary]] = {}
        for j in cohort.arms:
            sel = in_c & (data.a1 == j)
            n = int(np.count_nonzero(sel))
            if n == 0:
                arms[j] = None
                continue
            seq_n, seq_mean, seq_var = {}, {}, {}
            for k in (CONTINUE,) + STAGE2_ARMS:
                ys = data.y[sel & (data.a2 == k)]
                seq_n[k] = len(ys)
                seq_mean[k] = float(ys.mean()) if len(ys) else None
                seq_var[k] = float(ys.var(ddof=1)) if len(ys) > 1 else None
            arms[j] = ArmSummary(n, float(data.r[sel].mean()), seq_n, seq_mean, seq_var)
        out[cohort] = arms
    return out


def _fmt_y(v: float, outcome: str) -> str:
    return str(int(v)) if outcome == "binary" else repr(float(v))


def to_csv(data: TrialDataset) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for c, a1, r, a2, y in zip(data.cohort.tolist(), data.a1.tolist(), data.r.tolist(),
                               data.a2.tolist(), data.y.tolist()):
        a2s = f"a1{a1}" if a2 == CONTINUE else f"a2{a2}"
        buf.write(f"c{c},a1{a1},{r},{a2s},{_fmt_y(y, data.outcome)}\n")
    return buf.getvalue()


def write_csv(data: TrialDataset, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(to_csv(data))


def _parse_row(row, lineno):
    if len(row) != len(CSV_COLUMNS):
        raise DataError(f"row {lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
    c, a1, r, a2, y = (s.strip().lower() for s in row)
    try:
        cohort = Cohort.parse(c).number
        if a1[:2] != "a1" or len(a1) != 3:
            raise ValueError(f"bad a1 {a1!r}")
        j = int(a1[2])
        if j not in Cohort.parse(c).arms:
            raise ValueError(f"arm {a1} not available in {c}")
        resp = int(r)
        if resp not in (0, 1):
            raise ValueError(f"r must be 0 or 1, got {r!r}")
        if a2 == a1:
            k = CONTINUE
        elif a2[:2] == "a2" and len(a2) == 3 and int(a2[2]) in STAGE2_ARMS:
            k = int(a2[2])
        else:
            raise ValueError(f"bad a2 {a2!r}")
        if (resp == 0) != (k == CONTINUE):
            raise ValueError("non-responders continue a1 and responders switch to a stage-2 arm")
        yv = float(y)
        if not math.isfinite(yv):
            raise ValueError(f"non-finite y {y!r}")
    except ValueError as exc:
        raise DataError(f"row {lineno}: {exc}") from None
    return cohort, j, resp, k, yv


def read_csv(path: str | os.PathLike, outcome: Optional[str] = None) -> TrialDataset:
    """Read a dataset written by :func:`write_csv`.

    ``outcome=None`` infers ``binary`` when every y is 0 or 1.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != list(CSV_COLUMNS):
            raise DataError(f"row 1: header must be {','.join(CSV_COLUMNS)}")
        rows = [_parse_row(row, i) for i, row in enumerate(reader, start=2) if row]
    if not rows:
        raise DataError("dataset has no rows")
    cohort, a1, r, a2, y = (np.array(col) for col in zip(*rows))
    if outcome is None:
        outcome = "binary" if np.isin(y, (0.0, 1.0)).all() else "continuous"
    return TrialDataset(cohort, a1, r, a2, y, outcome=outcome)
