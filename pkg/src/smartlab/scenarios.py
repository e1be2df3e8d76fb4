"""Built-in scenarios and the flat-key scenario/design configuration schema.

Keys follow the table row names: ``response_rate.a11.c1``,
``seq_mean.a11_a21.c2``, optionally ``seq_sd.a11_a21.c2``. Configuration
files are TOML, where those dotted keys nest naturally under ``[scenario]``.
"""
from __future__ import annotations

import os
from typing import Any, Dict, Mapping, Tuple

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .trial import (CONTINUE, Cohort, CohortParams, ScenarioParams, TrialDesign,
                    parse_sequence_label, sequence_label)

DEFAULT_SIGMA = 2.0

_SEQ_ORDER = [(1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2), (3, 0), (3, 1), (3, 2)]


def _cohort(rates, means) -> CohortParams:
    return CohortParams(
        response_rate={j: float(p) for j, p in zip((1, 2, 3), rates)},
        seq_mean={key: float(m) for key, m in zip(_SEQ_ORDER, means)},
    )


def _scenario(name, outcome, c1, c2, direction, time_effect=None, sigma=DEFAULT_SIGMA):
    return ScenarioParams(
        name=name, outcome=outcome,
        cohorts={Cohort.C1: _cohort(*c1), Cohort.C2: _cohort(*c2)},
        sigma=sigma, direction=direction, time_effect=time_effect,
    )


# Sequence means listed in _SEQ_ORDER: a11a11, a11a21, a11a22, a12a12, a12a21,
# a12a22, a13a13, a13a21, a13a22.
_T1 = {
    "table1-s1": (
        ((0.5, 0.5, 0.5), (15, 17, 17, 15, 17, 17, 15, 17, 17)),
        ((0.5, 0.5, 0.5), (15, 17, 17, 15, 17, 17, 15, 17, 17)),
        None),
    "table1-s2": (
        ((0.4, 0.5, 0.6), (15, 17, 18, 19, 18, 16, 16, 16, 17)),
        ((0.4, 0.5, 0.6), (15, 17, 18, 19, 18, 16, 16, 16, 17)),
        None),
    "table1-s3": (
        ((0.4, 0.5, 0.6), (15, 17, 18, 19, 18, 16, 20, 19, 17)),
        ((0.4, 0.5, 0.6), (15, 17, 18, 19, 18, 16, 20, 19, 17)),
        None),
    "table1-s4": (
        ((0.4, 0.5, 0.6), (16, 19, 18, 19, 18, 16, 20, 19, 17)),
        ((0.5, 0.6, 0.7), (18, 21, 20, 21, 20, 18, 22, 21, 19)),
        "fixed shift on all response rates and sequence means"),
    "table1-s5": (
        ((0.4, 0.5, 0.6), (15, 17, 18, 19, 18, 16, 21, 19, 17)),
        ((0.5, 0.6, 0.7), (17, 19, 20, 21, 20, 18, 22, 20, 18)),
        "sequence-specific shifts"),
}

_T2 = {
    "table2-s1": (
        ((0.55, 0.50, 0.45), (0.168, 0.150, 0.150, 0.168, 0.150, 0.150, 0.168, 0.150, 0.150)),
        ((0.55, 0.50, 0.45), (0.168, 0.150, 0.150, 0.168, 0.150, 0.150, 0.168, 0.150, 0.150)),
        None),
    "table2-s2": (
        ((0.55, 0.50, 0.45), (0.168, 0.150, 0.160, 0.200, 0.160, 0.190, 0.140, 0.120, 0.130)),
        ((0.55, 0.50, 0.45), (0.168, 0.150, 0.160, 0.200, 0.160, 0.190, 0.140, 0.120, 0.130)),
        None),
    "table2-s3": (
        ((0.55, 0.50, 0.45), (0.168, 0.150, 0.160, 0.200, 0.160, 0.190, 0.140, 0.120, 0.130)),
        ((0.55, 0.50, 0.45), (0.230, 0.210, 0.220, 0.270, 0.220, 0.260, 0.200, 0.170, 0.240)),
        "odds ratio 1.5 between cohorts"),
}

BUILTIN: Dict[str, ScenarioParams] = {}
for _name, (_c1, _c2, _te) in _T1.items():
    BUILTIN[_name] = _scenario(_name, "continuous", _c1, _c2, "maximize", _te)
for _name, (_c1, _c2, _te) in _T2.items():
    BUILTIN[_name] = _scenario(_name, "binary", _c1, _c2, "minimize", _te)


def get_scenario(name: str, sigma: float | None = None) -> ScenarioParams:
    try:
        sc = BUILTIN[name]
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; builtins: {', '.join(BUILTIN)}") from None
    return sc.with_sigma(sigma) if sigma is not None else sc


def flatten(d: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    out = {}
    for key, value in d.items():
        full = f"{prefix}{key}"
        if isinstance(value, Mapping):
            out.update(flatten(value, full + "."))
        else:
            out[full] = value
    return out


def scenario_to_flat(sc: ScenarioParams) -> Dict[str, Any]:
    flat: Dict[str, Any] = {"name": sc.name, "outcome": sc.outcome, "direction": sc.direction}
    if sc.outcome == "continuous":
        flat["sigma"] = sc.sigma
    if sc.time_effect is not None:
        flat["time_effect"] = sc.time_effect
    for cohort, params in sc.cohorts.items():
        for j, pi in sorted(params.response_rate.items()):
            flat[f"response_rate.a1{j}.{cohort.value}"] = pi
        for key, m in sorted(params.seq_mean.items()):
            flat[f"seq_mean.{sequence_label(*key)}.{cohort.value}"] = m
        for key, s in sorted(params.seq_sd.items()):
            flat[f"seq_sd.{sequence_label(*key)}.{cohort.value}"] = s
    return flat


def _as_float(key, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"field {key!r} must be a number, got {value!r}")
    return float(value)


def scenario_from_flat(flat: Mapping[str, Any]) -> ScenarioParams:
    """Build a scenario from ``scenario.*`` keys (without the prefix).

    ``builtin = "table1-s4"`` seeds every value from the registry; explicit
    keys override individual cells.
    """
    base: Dict[str, Any] = {}
    if "builtin" in flat:
        base = scenario_to_flat(get_scenario(str(flat["builtin"])))
    merged = {**base, **{k: v for k, v in flat.items() if k != "builtin"}}
    for required in ("outcome",):
        if required not in merged:
            raise ConfigError(f"missing required field 'scenario.{required}'")
    rates: Dict[Cohort, Dict[int, float]] = {c: {} for c in Cohort}
    means: Dict[Cohort, Dict[Tuple[int, int], float]] = {c: {} for c in Cohort}
    sds: Dict[Cohort, Dict[Tuple[int, int], float]] = {c: {} for c in Cohort}
    known = {"name", "outcome", "direction", "sigma", "time_effect"}
    for key, value in merged.items():
        if key in known:
            continue
        parts = key.split(".")
        if len(parts) != 3 or parts[0] not in ("response_rate", "seq_mean", "seq_sd"):
            raise ConfigError(f"unknown field 'scenario.{key}'")
        kind, item, cohort_tag = parts
        try:
            cohort = Cohort.parse(cohort_tag)
        except ValueError:
            raise ConfigError(f"field 'scenario.{key}': unknown cohort {cohort_tag!r}") from None
        try:
            if kind == "response_rate":
                j = int(item.removeprefix("a1"))
                # a13 values are allowed in c1 (not randomized there, but tabulated).
                if item[:2] != "a1" or j not in (1, 2, 3):
                    raise ValueError
                rates[cohort][j] = _as_float(key, value)
            else:
                seq = parse_sequence_label(item)
                (means if kind == "seq_mean" else sds)[cohort][seq] = _as_float(key, value)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"field 'scenario.{key}': bad item {item!r}") from None
    cohorts = {}
    for cohort in Cohort:
        if not rates[cohort] and not means[cohort]:
            continue
        for j in cohort.arms:
            if j not in rates[cohort]:
                raise ConfigError(f"missing required field 'scenario.response_rate.a1{j}.{cohort.value}'")
            for k in (CONTINUE, 1, 2):
                if (j, k) not in means[cohort]:
                    raise ConfigError(
                        f"missing required field 'scenario.seq_mean.{sequence_label(j, k)}.{cohort.value}'")
        cohorts[cohort] = CohortParams(rates[cohort], means[cohort], sds[cohort])
    if not cohorts:
        raise ConfigError("scenario defines no cohort parameters")
    try:
        return ScenarioParams(
            name=str(merged.get("name", merged.get("builtin", "custom"))),
            outcome=str(merged["outcome"]),
            cohorts=cohorts,
            sigma=_as_float("sigma", merged.get("sigma", DEFAULT_SIGMA)),
            direction=str(merged.get("direction", "maximize")),
            time_effect=merged.get("time_effect"),
        )
    except ConfigError as exc:
        raise ConfigError(f"scenario: {exc}") from None


def design_from_flat(flat: Mapping[str, Any]) -> TrialDesign:
    for required in ("n", "r"):
        if required not in flat:
            raise ConfigError(f"missing required field 'design.{required}'")
    n = flat["n"]
    if isinstance(n, bool) or not isinstance(n, int):
        raise ConfigError(f"field 'design.n' must be an integer, got {n!r}")
    q = flat.get("q", 0.5)
    q = (float(q), float(q)) if not isinstance(q, (list, tuple)) else tuple(float(v) for v in q)
    if len(q) != 2:
        raise ConfigError("field 'design.q' must be a number or a pair of numbers")
    known = {"n", "r", "q", "allocation", "seed"}
    unknown = set(flat) - known
    if unknown:
        raise ConfigError(f"unknown field 'design.{sorted(unknown)[0]}'")
    return TrialDesign(n=n, r=_as_float("design.r", flat["r"]), q=q,
                       allocation=str(flat.get("allocation", "fixed")))


def load_toml(path: str | os.PathLike) -> Dict[str, Any]:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None


def load_scenario_design(doc: Mapping[str, Any]) -> Tuple[ScenarioParams, TrialDesign]:
    """Resolve ``[scenario]`` and ``[design]`` tables of a parsed config."""
    if "scenario" not in doc:
        raise ConfigError("missing required table 'scenario'")
    if "design" not in doc:
        raise ConfigError("missing required table 'design'")
    sc_table = doc["scenario"]
    if isinstance(sc_table, str):
        sc_table = {"builtin": sc_table}
    scenario = scenario_from_flat(flatten(sc_table))
    design = design_from_flat(flatten(doc["design"]))
    return scenario, design


SCHEMA = """\
# smartlab configuration (TOML). Dotted keys may be written inline or as tables.

[scenario]
builtin = "table1-s2"        # optional: start from a built-in scenario
name = "my-scenario"         # optional label
outcome = "continuous"       # required unless builtin: continuous | binary
direction = "maximize"       # maximize | minimize (binary mortality: minimize)
sigma = 2.0                  # continuous outcome SD shared by all sequences
response_rate.a11.c1 = 0.4   # response_rate.<a1j>.<c1|c2>; a13 only in c2
seq_mean.a11_a11.c1 = 15.0   # seq_mean.<a1j>_<a1j|a21|a22>.<c1|c2>
seq_sd.a11_a21.c2 = 2.5      # optional per-sequence SD override

[design]
n = 1000                     # required: planned size of the original SMART
r = 0.5                      # required: n1 / n, in [0, 1)
q = 0.5                      # responder probability of a21 (or [q_c1, q_c2])
allocation = "fixed"         # fixed | bernoulli
seed = 42                    # master seed (SMARTLAB_SEED overrides)

[study]
scenarios = ["table1-s1", "table1-s2"]
n = [1000]
r = [0.5]
replicates = 200
approaches = ["separate", "pooling", "BIGweak", "BIGlogdis", "BIGcomP", "BIGcommP"]
estimand = ["d11", "d31"]
seed = 20240101
sigma = 2.0                  # optional override for continuous scenarios

[sampler]
chains = 4
burn_in = 2000
draws = 4000                 # retained draws summed over chains
thin = 5                     # sweeps per retained draw
gformula_n = 0               # 0 = closed-form G-formula, else population size N
tau_grid = [0.1, 20.0]       # mixed commensurate prior
tau_weights = [0.5, 0.5]
pool_weights = "original-arms"  # or "cohort-total": pooling cohort weights
tau_per_coefficient = false  # experimental: BIGcomP with one tau per shared coefficient
"""
