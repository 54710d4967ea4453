"""Run configuration: age grid, condition registry, covariate schema, thresholds.

All tunable thresholds used anywhere in the pipeline live here, so a config
file plus the input files fully determines a run.  ``load_config`` applies
the documented defaults and returns the effective configuration; the CLI
echoes it into the run manifest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, asdict
from pathlib import Path

import yaml

from .errors import ConfigError

DEFAULT_T_MAX = 105


@dataclass(frozen=True)
class CovariateSpec:
    """Declared covariate: categorical with fixed levels, or numeric."""

    name: str
    kind: str  # "categorical" | "numeric"
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("categorical", "numeric"):
            raise ConfigError(f"covariate {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and len(self.levels) < 2:
            raise ConfigError(f"covariate {self.name!r}: categorical needs >= 2 levels")


@dataclass(frozen=True)
class Thresholds:
    """Every tunable knob of the downstream stages."""

    error_budget: float = 0.01  # max fraction of rejected input rows
    node_prevalence_min: float = 0.2  # min in-cluster prevalence for a graph node
    edge_support_min: int = 10  # min members with both conditions for an edge
    edge_alpha: float = 0.05  # one-sided binomial level for transition edges
    heatmap_alpha: float = 0.05  # mask log-odds cells with p >= this
    k_min: int | None = None  # partition-size scan range (required by select-k)
    k_max: int | None = None
    ward_variant: str = "direct"  # "direct" | "squared"

    def __post_init__(self):
        if self.ward_variant not in ("direct", "squared"):
            raise ConfigError(f"ward_variant must be 'direct' or 'squared', got {self.ward_variant!r}")
        for name in ("error_budget", "node_prevalence_min", "edge_alpha", "heatmap_alpha"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"threshold {name} must lie in [0, 1], got {v}")

    def require_k_range(self, n: int) -> tuple[int, int]:
        if self.k_min is None or self.k_max is None:
            raise ConfigError("thresholds.k_min and thresholds.k_max are required for partition-size selection")
        if not 2 <= self.k_min < self.k_max <= n - 1:
            raise ConfigError(f"need 2 <= k_min < k_max <= n-1, got [{self.k_min}, {self.k_max}] with n={n}")
        return self.k_min, self.k_max


@dataclass(frozen=True)
class AnalysisConfig:
    conditions: tuple[tuple[str, str], ...]  # (code, display name)
    t_max: int = DEFAULT_T_MAX
    covariates: tuple[CovariateSpec, ...] = ()
    index_condition: str | None = None
    thresholds: Thresholds = field(default_factory=Thresholds)
    figures: bool = True
    archetypes: tuple[dict, ...] = ()  # raw blocks, parsed by the simulator
    simulate: dict = field(default_factory=dict)  # simulator settings (n, background rates)

    def __post_init__(self):
        if self.t_max < 1:
            raise ConfigError(f"t_max must be >= 1, got {self.t_max}")
        codes = [c for c, _ in self.conditions]
        if self.index_condition is not None and self.index_condition not in codes:
            raise ConfigError(f"index_condition {self.index_condition!r} not in the condition registry")

    def covariate(self, name: str) -> CovariateSpec:
        for spec in self.covariates:
            if spec.name == name:
                return spec
        raise ConfigError(f"covariate {name!r} not declared in the schema")

    def effective_dict(self) -> dict:
        """Fully-resolved configuration for the run manifest."""
        d = asdict(self)
        d["conditions"] = [{"code": c, "name": n} for c, n in self.conditions]
        d["covariates"] = [asdict(s) for s in self.covariates]
        d["archetypes"] = list(self.archetypes)
        return d


_TOP_KEYS = {"t_max", "conditions", "covariates", "index_condition", "thresholds", "figures", "archetypes", "simulate"}


def _parse_conditions(raw) -> tuple[tuple[str, str], ...]:
    if not isinstance(raw, list) or not raw:
        raise ConfigError("conditions must be a non-empty list")
    out = []
    for item in raw:
        if isinstance(item, str):
            out.append((item, item))
        elif isinstance(item, dict) and "code" in item:
            out.append((str(item["code"]), str(item.get("name", item["code"]))))
        else:
            raise ConfigError(f"bad condition entry: {item!r}")
    return tuple(out)


def _parse_covariates(raw) -> tuple[CovariateSpec, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, dict):
        raise ConfigError("covariates must be a mapping of name -> spec")
    out = []
    for name, spec in raw.items():
        if not isinstance(spec, dict) or "type" not in spec:
            raise ConfigError(f"covariate {name!r}: spec must be a mapping with a 'type' key")
        kind = spec["type"]
        levels = tuple(str(s) for s in spec.get("levels", ()))
        out.append(CovariateSpec(name=str(name), kind=kind, levels=levels))
    return tuple(out)


def config_from_dict(doc: dict) -> AnalysisConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "conditions" not in doc:
        raise ConfigError("config must declare 'conditions'")

    thr_raw = doc.get("thresholds") or {}
    if not isinstance(thr_raw, dict):
        raise ConfigError("thresholds must be a mapping")
    valid = set(Thresholds.__dataclass_fields__)
    unknown = set(thr_raw) - valid
    if unknown:
        raise ConfigError(f"unknown threshold keys: {', '.join(sorted(unknown))}")
    try:
        thresholds = Thresholds(**thr_raw)
    except TypeError as exc:
        raise ConfigError(f"bad thresholds block: {exc}") from exc

    return AnalysisConfig(
        conditions=_parse_conditions(doc["conditions"]),
        t_max=int(doc.get("t_max", DEFAULT_T_MAX)),
        covariates=_parse_covariates(doc.get("covariates")),
        index_condition=doc.get("index_condition"),
        thresholds=thresholds,
        figures=bool(doc.get("figures", True)),
        archetypes=tuple(doc.get("archetypes") or ()),
        simulate=dict(doc.get("simulate") or {}),
    )


def load_config(path: str | Path) -> AnalysisConfig:
    """Parse a YAML/JSON config file into an :class:`AnalysisConfig`."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(doc)


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
