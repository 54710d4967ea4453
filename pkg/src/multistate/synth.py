"""Synthetic cohorts with planted trajectory archetypes.

Every subject gets an independent random stream keyed by (seed, subject
index) through SeedSequence spawn keys, so generation is bit-reproducible
and order-independent: subjects may be drawn in parallel or in any order
and the cohort comes out identical.

Archetype blocks live in the config file:

    archetypes:
      - label: cardio
        weight: 0.5
        conditions: {hyp: [45, 55], dm: 58}   # uniform range or fixed onset
        core_prob: 0.9                        # presence prob of each core condition
        censor: [70, 105]                     # overrides background censor range
        covariates: {smoking: {probs: {"1": 0.6, "0": 0.4}}}
        condition_odds: {ckd: 4.0}            # odds multiplier on background prevalence
    simulate:
      n: 300
      background:
        condition_prob: 0.05
        onset: [30, 90]
        censor: [60, 105]
        death_prob: 0.2
        covariates:
          sex: {probs: {F: 0.5, M: 0.5}}
          baseline_age: {uniform: [40, 80]}
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cohort import Cohort, ConditionRegistry, EventRecord, SubjectRecord
from .config import AnalysisConfig
from .errors import ConfigError


def _int_range(raw, what: str, lo: int, hi: int) -> tuple[int, int]:
    """Accept a fixed int or a [lo, hi] pair; validate against the age grid."""
    if isinstance(raw, (int, np.integer)):
        pair = (int(raw), int(raw))
    elif isinstance(raw, (list, tuple)) and len(raw) == 2:
        pair = (int(raw[0]), int(raw[1]))
    else:
        raise ConfigError(f"{what}: expected an integer or [lo, hi] pair, got {raw!r}")
    if pair[0] > pair[1]:
        raise ConfigError(f"{what}: empty range {pair}")
    if not (lo <= pair[0] and pair[1] <= hi):
        raise ConfigError(f"{what}: range {pair} outside [{lo}, {hi}]")
    return pair


def _level_probs(raw, levels: tuple[str, ...], what: str) -> dict[str, float]:
    probs = raw.get("probs")
    if not isinstance(probs, dict):
        raise ConfigError(f"{what}: categorical spec needs a 'probs' mapping")
    out = {str(k): float(v) for k, v in probs.items()}
    if set(out) != set(levels):
        raise ConfigError(f"{what}: probs levels {sorted(out)} do not match declared {sorted(levels)}")
    total = sum(out.values())
    if abs(total - 1.0) > 1e-9 or any(v < 0 for v in out.values()):
        raise ConfigError(f"{what}: probs must be nonnegative and sum to 1")
    return out


@dataclass(frozen=True)
class Archetype:
    label: str
    weight: float
    conditions: dict[str, tuple[int, int]]  # onset ranges, inclusive
    core_prob: float = 1.0
    censor: tuple[int, int] | None = None
    covariates: dict[str, dict[str, float]] = field(default_factory=dict)  # level probs
    condition_odds: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class Background:
    condition_prob: float
    onset: tuple[int, int]
    censor: tuple[int, int]
    death_prob: float
    categorical: dict[str, dict[str, float]]  # name -> level probs
    numeric: dict[str, tuple[float, float]]  # name -> uniform bounds


def _parse_background(config: AnalysisConfig) -> Background:
    raw = config.simulate.get("background") or {}
    unknown = set(raw) - {"condition_prob", "onset", "censor", "death_prob", "covariates"}
    if unknown:
        raise ConfigError(f"simulate.background: unknown keys {sorted(unknown)}")
    t_max = config.t_max
    cond_prob = float(raw.get("condition_prob", 0.0))
    if not 0.0 <= cond_prob < 1.0:
        raise ConfigError(f"simulate.background: condition_prob must be in [0, 1), got {cond_prob}")
    categorical: dict[str, dict[str, float]] = {}
    numeric: dict[str, tuple[float, float]] = {}
    declared = {spec.name: spec for spec in config.covariates}
    for name, spec_raw in (raw.get("covariates") or {}).items():
        spec = declared.get(name)
        if spec is None:
            raise ConfigError(f"simulate.background: covariate {name!r} is not declared")
        if spec.kind == "categorical":
            categorical[name] = _level_probs(spec_raw, spec.levels, f"simulate.background.covariates.{name}")
        else:
            lo, hi = spec_raw.get("uniform", (None, None))
            if lo is None or hi is None or float(lo) > float(hi):
                raise ConfigError(f"simulate.background.covariates.{name}: needs 'uniform: [lo, hi]'")
            numeric[name] = (float(lo), float(hi))
    missing = [n for n in declared if n not in categorical and n not in numeric]
    if missing:
        raise ConfigError(f"simulate.background: no distribution for declared covariates {missing}")
    return Background(
        condition_prob=cond_prob,
        onset=_int_range(raw.get("onset", [1, t_max]), "simulate.background.onset", 1, t_max),
        censor=_int_range(raw.get("censor", [1, t_max]), "simulate.background.censor", 1, t_max),
        death_prob=float(raw.get("death_prob", 0.0)),
        categorical=categorical,
        numeric=numeric,
    )


def parse_archetypes(config: AnalysisConfig) -> list[Archetype]:
    if not config.archetypes:
        raise ConfigError("no archetypes defined in config")
    registry = ConditionRegistry.from_config(config)
    declared = {spec.name: spec for spec in config.covariates}
    out: list[Archetype] = []
    for i, raw in enumerate(config.archetypes):
        what = f"archetypes[{i}]"
        if not isinstance(raw, dict):
            raise ConfigError(f"{what}: expected a mapping")
        unknown = set(raw) - {"label", "weight", "conditions", "core_prob", "censor", "covariates", "condition_odds"}
        if unknown:
            raise ConfigError(f"{what}: unknown keys {sorted(unknown)}")
        label = str(raw.get("label", i))
        conditions = {}
        for code, rng in (raw.get("conditions") or {}).items():
            if code not in registry:
                raise ConfigError(f"{what}: unknown condition {code!r}")
            conditions[code] = _int_range(rng, f"{what}.conditions.{code}", 1, config.t_max)
        core_prob = float(raw.get("core_prob", 1.0))
        if not 0.0 < core_prob <= 1.0:
            raise ConfigError(f"{what}: core_prob must be in (0, 1], got {core_prob}")
        censor = raw.get("censor")
        covariates = {}
        for name, spec_raw in (raw.get("covariates") or {}).items():
            spec = declared.get(name)
            if spec is None or spec.kind != "categorical":
                raise ConfigError(f"{what}: covariate override {name!r} must name a declared categorical covariate")
            covariates[name] = _level_probs(spec_raw, spec.levels, f"{what}.covariates.{name}")
        condition_odds = {}
        for code, mult in (raw.get("condition_odds") or {}).items():
            if code not in registry:
                raise ConfigError(f"{what}: unknown condition {code!r} in condition_odds")
            if float(mult) <= 0:
                raise ConfigError(f"{what}: condition_odds must be positive")
            condition_odds[code] = float(mult)
        out.append(
            Archetype(
                label=label,
                weight=float(raw.get("weight", 0.0)),
                conditions=conditions,
                core_prob=core_prob,
                censor=None if censor is None else _int_range(censor, f"{what}.censor", 1, config.t_max),
                covariates=covariates,
                condition_odds=condition_odds,
            )
        )
    total = sum(a.weight for a in out)
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"archetype weights must sum to 1, got {total}")
    if len({a.label for a in out}) != len(out):
        raise ConfigError("archetype labels must be unique")
    return out


def _pick_level(rng: np.random.Generator, probs: dict[str, float], levels: tuple[str, ...]) -> str:
    u = rng.random()
    acc = 0.0
    for lv in levels:
        acc += probs[lv]
        if u < acc:
            return lv
    return levels[-1]


def generate(config: AnalysisConfig, n: int, seed: int) -> tuple[Cohort, np.ndarray]:
    """Draw n subjects; returns the cohort and the planted archetype index
    per subject.  Identical (config, n, seed) gives a bit-identical cohort."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    archetypes = parse_archetypes(config)
    background = _parse_background(config)
    registry = ConditionRegistry.from_config(config)
    cum_weights = np.cumsum([a.weight for a in archetypes])

    records: list[SubjectRecord] = []
    events: list[EventRecord] = []
    labels = np.empty(n, dtype=np.int64)
    width = len(str(n - 1))
    for idx in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(idx,)))
        a_idx = int(np.searchsorted(cum_weights, rng.random(), side="right"))
        a_idx = min(a_idx, len(archetypes) - 1)
        arch = archetypes[a_idx]
        labels[idx] = a_idx

        lo, hi = arch.censor if arch.censor is not None else background.censor
        censor = int(rng.integers(lo, hi + 1))
        death = bool(rng.random() < background.death_prob)

        covariates: dict = {}
        for spec in config.covariates:
            if spec.kind == "categorical":
                probs = arch.covariates.get(spec.name, background.categorical[spec.name])
                covariates[spec.name] = _pick_level(rng, probs, spec.levels)
            else:
                b_lo, b_hi = background.numeric[spec.name]
                covariates[spec.name] = float(rng.uniform(b_lo, b_hi))

        sid = f"S{idx:0{width}d}"
        records.append(SubjectRecord(sid, censor, death, covariates))

        onsets: dict[str, int] = {}
        for code in registry.codes:
            if code in arch.conditions:
                if arch.core_prob < 1.0 and rng.random() >= arch.core_prob:
                    continue
                o_lo, o_hi = arch.conditions[code]
                onset = int(rng.integers(o_lo, o_hi + 1))
            else:
                p = background.condition_prob
                mult = arch.condition_odds.get(code)
                if mult is not None:
                    odds = mult * p / (1.0 - p)
                    p = odds / (1.0 + odds)
                if p <= 0.0 or rng.random() >= p:
                    continue
                o_lo, o_hi = background.onset
                onset = int(rng.integers(o_lo, o_hi + 1))
            if onset < censor:  # follow-up is [0, censor); later onsets go unrecorded
                onsets[code] = onset
        for code, onset in onsets.items():
            events.append(EventRecord(sid, code, onset))

    cohort = Cohort.from_records(registry, config.t_max, records, events)
    return cohort, labels
