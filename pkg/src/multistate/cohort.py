"""Subject-level event histories on a common integer age grid.

Each subject is represented by a bit-packed binary state matrix (one column
per registered condition, bit ``a`` set iff the condition had its onset at or
before age ``a``) plus a follow-up indicator (bit ``a`` set iff age ``a`` lies
before the censoring age).  Bits are packed little-endian into 64-bit words:
age ``a`` lives in word ``a // 64`` at bit ``a % 64``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import AnalysisConfig, CovariateSpec
from .errors import BudgetError, ConfigError, DataError

_WORD = 64


def _n_words(t_max: int) -> int:
    return (t_max + _WORD - 1) // _WORD


def _pack_range(start: int, stop: int, t_max: int) -> np.ndarray:
    """Bit vector of length t_max with bits [start, stop) set."""
    words = np.zeros(_n_words(t_max), dtype=np.uint64)
    for w in range(words.shape[0]):
        lo = max(start - w * _WORD, 0)
        hi = min(stop - w * _WORD, _WORD)
        if hi > lo:
            words[w] = ((1 << hi) - 1) ^ ((1 << lo) - 1)
    words.flags.writeable = False
    return words


class ConditionRegistry:
    """Fixed, ordered set of condition codes shared by a whole cohort."""

    def __init__(self, codes: list[str] | tuple[str, ...], names: dict[str, str] | None = None):
        codes = list(codes)
        if not codes:
            raise ConfigError("EmptyRegistry: need at least one condition code")
        if len(set(codes)) != len(codes):
            dupes = sorted({c for c in codes if codes.count(c) > 1})
            raise ConfigError(f"duplicate condition codes: {', '.join(dupes)}")
        self.codes: tuple[str, ...] = tuple(codes)
        names = names or {}
        self.names: tuple[str, ...] = tuple(names.get(c, c) for c in codes)
        self._index = {c: i for i, c in enumerate(codes)}

    @property
    def k(self) -> int:
        return len(self.codes)

    def index(self, code: str) -> int:
        try:
            return self._index[code]
        except KeyError:
            raise DataError(f"unknown condition code {code!r}") from None

    def __contains__(self, code: str) -> bool:
        return code in self._index

    @classmethod
    def from_config(cls, config: AnalysisConfig) -> "ConditionRegistry":
        return cls([c for c, _ in config.conditions], dict(config.conditions))


def register_conditions(codes: list[str], names: dict[str, str] | None = None) -> ConditionRegistry:
    """Fix the condition column ordering for a cohort."""
    return ConditionRegistry(codes, names)


@dataclass(frozen=True)
class EventRecord:
    subject_id: str
    condition: str
    onset_age: int


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    censor_age: int  # end of observation, exclusive
    death: bool = False
    covariates: dict = field(default_factory=dict)


class StateMatrix:
    """t_max x k binary event-status matrix, stored column-wise bit-packed."""

    __slots__ = ("t_max", "k", "words")

    def __init__(self, t_max: int, k: int, words: np.ndarray):
        self.t_max = t_max
        self.k = k
        self.words = words  # shape (k, n_words), uint64, read-only

    def to_dense(self) -> np.ndarray:
        """Unpacked (t_max, k) 0/1 matrix, ages as rows."""
        bits = np.unpackbits(self.words.view(np.uint8), axis=1, bitorder="little")
        return bits[:, : self.t_max].T.astype(np.uint8)

    def column_any(self, col: int) -> bool:
        return bool(self.words[col].any())


class FollowUp:
    """Observation indicator: ones for ages [0, censor_age)."""

    __slots__ = ("t_max", "censor_age", "words")

    def __init__(self, t_max: int, censor_age: int, words: np.ndarray):
        self.t_max = t_max
        self.censor_age = censor_age
        self.words = words  # shape (n_words,), uint64, read-only

    def to_dense(self) -> np.ndarray:
        bits = np.unpackbits(self.words.view(np.uint8), bitorder="little")
        return bits[: self.t_max].astype(np.uint8)


def build_state_matrix(onsets: dict[str, int], registry: ConditionRegistry, t_max: int) -> StateMatrix:
    """Pack one subject's onset ages into a StateMatrix.

    ``onsets`` maps condition code -> integer onset age; conditions without
    an event are simply absent and get an all-zero column.
    """
    words = np.zeros((registry.k, _n_words(t_max)), dtype=np.uint64)
    for code, onset in onsets.items():
        col = registry.index(code)
        if not 0 <= onset <= t_max - 1:
            raise DataError(f"onset_age {onset} outside the age grid [0, {t_max - 1}] for {code!r}")
        words[col] = _pack_range(onset, t_max, t_max)
    words.flags.writeable = False
    return StateMatrix(t_max, registry.k, words)


def build_follow_up(censor_age: int, t_max: int) -> FollowUp:
    if not 1 <= censor_age <= t_max:
        raise DataError(f"censor_age {censor_age} outside [1, {t_max}]")
    return FollowUp(t_max, censor_age, _pack_range(0, censor_age, t_max))


@dataclass(frozen=True)
class Subject:
    record: SubjectRecord
    onsets: dict  # condition code -> onset age
    state: StateMatrix
    follow_up: FollowUp


class Cohort:
    """Immutable collection of subjects sharing one registry and age grid."""

    def __init__(self, registry: ConditionRegistry, t_max: int, subjects: list[Subject]):
        ids = [s.record.subject_id for s in subjects]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate subject_ids in cohort")
        self.registry = registry
        self.t_max = t_max
        self.subjects: tuple[Subject, ...] = tuple(subjects)
        self._packed: tuple[np.ndarray, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.subjects)

    @property
    def subject_ids(self) -> list[str]:
        return [s.record.subject_id for s in self.subjects]

    def multimorbidity_index(self, idx: int) -> int:
        """Number of distinct conditions with an event record."""
        return len(self.subjects[idx].onsets)

    def packed(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked bit planes for the pairwise kernel.

        Returns (states, follow) with shapes (n, k * n_words) and
        (n, n_words); row layout matches StateMatrix.words.reshape(-1).
        """
        if self._packed is None:
            states = np.stack([s.state.words.reshape(-1) for s in self.subjects])
            follow = np.stack([s.follow_up.words for s in self.subjects])
            states.flags.writeable = False
            follow.flags.writeable = False
            self._packed = (states, follow)
        return self._packed

    @classmethod
    def from_records(
        cls,
        registry: ConditionRegistry,
        t_max: int,
        subject_records: list[SubjectRecord],
        events: list[EventRecord],
    ) -> "Cohort":
        """Assemble a cohort from already-validated records."""
        onsets_by_subject: dict[str, dict[str, int]] = {r.subject_id: {} for r in subject_records}
        for ev in events:
            per = onsets_by_subject.get(ev.subject_id)
            if per is None:
                raise DataError(f"event for unknown subject {ev.subject_id!r}")
            if ev.condition in per:
                raise DataError(f"duplicate event ({ev.subject_id!r}, {ev.condition!r})")
            per[ev.condition] = ev.onset_age
        subjects = []
        for rec in subject_records:
            onsets = onsets_by_subject[rec.subject_id]
            subjects.append(
                Subject(
                    record=rec,
                    onsets=onsets,
                    state=build_state_matrix(onsets, registry, t_max),
                    follow_up=build_follow_up(rec.censor_age, t_max),
                )
            )
        return cls(registry, t_max, subjects)

    # -- file round trip ----------------------------------------------------

    def write_events(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["subject_id", "condition", "onset_age"])
            for s in self.subjects:
                for code in self.registry.codes:
                    if code in s.onsets:
                        w.writerow([s.record.subject_id, code, s.onsets[code]])

    def write_subjects(self, path: str | Path, covariate_names: list[str] | None = None) -> None:
        if covariate_names is None:
            seen: dict[str, None] = {}
            for s in self.subjects:
                for name in s.record.covariates:
                    seen.setdefault(name)
            covariate_names = list(seen)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["subject_id", "censor_age", "death"] + covariate_names)
            for s in self.subjects:
                row = [s.record.subject_id, s.record.censor_age, int(s.record.death)]
                for name in covariate_names:
                    v = s.record.covariates.get(name)
                    if v is None:
                        row.append("")
                    elif isinstance(v, float):
                        row.append(repr(v))
                    else:
                        row.append(v)
                w.writerow(row)


# -- ingestion ---------------------------------------------------------------


@dataclass
class RejectedRow:
    file: str
    line: int  # 1-based line number including the header
    reason: str
    raw: str


@dataclass
class ValidationReport:
    n_subject_rows: int = 0
    n_event_rows: int = 0
    n_subjects: int = 0
    n_events: int = 0
    rejected: list[RejectedRow] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def n_rejected(self) -> int:
        return len(self.rejected)

    def rejected_fraction(self) -> float:
        total = self.n_subject_rows + self.n_event_rows
        return self.n_rejected / total if total else 0.0

    def summary_text(self) -> str:
        lines = [
            "validation summary",
            f"  subject rows: {self.n_subject_rows} ({self.n_subjects} accepted)",
            f"  event rows:   {self.n_event_rows} ({self.n_events} accepted)",
            f"  rejected:     {self.n_rejected} ({self.rejected_fraction():.4%})",
            f"  warnings:     {len(self.warnings)}",
        ]
        reasons: dict[str, int] = {}
        for r in self.rejected:
            reasons[r.reason] = reasons.get(r.reason, 0) + 1
        for reason in sorted(reasons):
            lines.append(f"    {reason}: {reasons[reason]}")
        for msg in self.warnings[:50]:
            lines.append(f"  warning: {msg}")
        if len(self.warnings) > 50:
            lines.append(f"  ... {len(self.warnings) - 50} more warnings")
        return "\n".join(lines) + "\n"

    def write_rejected_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["file", "line", "reason", "raw"])
            for r in self.rejected:
                w.writerow([r.file, r.line, r.reason, r.raw])


_TRUE = {"1", "true", "yes", "y"}
_FALSE = {"0", "false", "no", "n", ""}


def _parse_death(raw: str) -> bool:
    v = raw.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValueError(raw)


def _read_rows(path: Path, required: list[str]) -> tuple[list[str], list[tuple[int, dict]]]:
    try:
        fh = open(path, encoding="utf-8", newline="")
    except FileNotFoundError:
        raise DataError(f"input file not found: {path}") from None
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise DataError(f"{path}: empty file")
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"{path}: missing required columns {missing}")
        rows = [(i, row) for i, row in enumerate(reader, start=2)]
    return list(header), rows


def ingest(
    events_path: str | Path,
    subjects_path: str | Path,
    config: AnalysisConfig,
) -> tuple[Cohort, ValidationReport]:
    """Read, validate and pack the events/subjects files.

    Invalid rows are collected rather than fatal; ingestion aborts with
    :class:`BudgetError` only when the rejected fraction across both files
    exceeds ``thresholds.error_budget``.
    """
    registry = ConditionRegistry.from_config(config)
    t_max = config.t_max
    report = ValidationReport()
    schema = {spec.name: spec for spec in config.covariates}

    subj_header, subj_rows = _read_rows(Path(subjects_path), ["subject_id", "censor_age", "death"])
    extra = [c for c in subj_header if c not in ("subject_id", "censor_age", "death")]
    unknown_cols = [c for c in extra if c not in schema]
    if unknown_cols:
        raise ConfigError(f"subjects file has undeclared covariate columns: {unknown_cols}")
    for name in schema:
        if name not in extra:
            report.warnings.append(f"declared covariate {name!r} missing from subjects file; treated as all-missing")

    records: dict[str, SubjectRecord] = {}
    order: list[str] = []
    report.n_subject_rows = len(subj_rows)
    for line, row in subj_rows:
        sid = (row.get("subject_id") or "").strip()
        raw = ",".join((row.get(c) or "") for c in subj_header)
        if not sid:
            report.rejected.append(RejectedRow("subjects", line, "missing_subject_id", raw))
            continue
        if sid in records:
            report.rejected.append(RejectedRow("subjects", line, "duplicate_subject", raw))
            continue
        try:
            censor = int((row.get("censor_age") or "").strip())
        except ValueError:
            report.rejected.append(RejectedRow("subjects", line, "bad_censor_age", raw))
            continue
        if not 1 <= censor <= t_max:
            report.rejected.append(RejectedRow("subjects", line, "censor_age_out_of_range", raw))
            continue
        try:
            death = _parse_death(row.get("death") or "")
        except ValueError:
            report.rejected.append(RejectedRow("subjects", line, "bad_death_flag", raw))
            continue
        covariates: dict = {}
        bad = None
        for name, spec in schema.items():
            raw_v = (row.get(name) or "").strip()
            if raw_v == "":
                covariates[name] = None
            elif spec.kind == "numeric":
                try:
                    covariates[name] = float(raw_v)
                except ValueError:
                    bad = f"bad_numeric_covariate:{name}"
                    break
            else:
                if raw_v not in spec.levels:
                    bad = f"bad_categorical_level:{name}"
                    break
                covariates[name] = raw_v
        if bad:
            report.rejected.append(RejectedRow("subjects", line, bad, raw))
            continue
        records[sid] = SubjectRecord(sid, censor, death, covariates)
        order.append(sid)

    _, event_rows = _read_rows(Path(events_path), ["subject_id", "condition", "onset_age"])
    report.n_event_rows = len(event_rows)
    onsets: dict[str, dict[str, int]] = {sid: {} for sid in order}
    for line, row in event_rows:
        sid = (row.get("subject_id") or "").strip()
        code = (row.get("condition") or "").strip()
        raw = f"{sid},{code},{row.get('onset_age') or ''}"
        if sid not in onsets:
            report.rejected.append(RejectedRow("events", line, "unknown_subject", raw))
            continue
        if code not in registry:
            report.rejected.append(RejectedRow("events", line, "unknown_condition", raw))
            continue
        try:
            onset = int((row.get("onset_age") or "").strip())
        except ValueError:
            report.rejected.append(RejectedRow("events", line, "bad_onset_age", raw))
            continue
        if not 0 <= onset <= t_max - 1:
            report.rejected.append(RejectedRow("events", line, "onset_out_of_range", raw))
            continue
        if code in onsets[sid]:
            report.rejected.append(RejectedRow("events", line, "duplicate_event", raw))
            continue
        if onset >= records[sid].censor_age:
            # traced-back records can postdate administrative censoring
            report.warnings.append(f"subject {sid!r}: onset of {code!r} at {onset} on/after censor_age {records[sid].censor_age}")
        onsets[sid][code] = onset
        report.n_events += 1

    if report.rejected_fraction() > config.thresholds.error_budget:
        raise BudgetError(
            f"{report.n_rejected} of {report.n_subject_rows + report.n_event_rows} rows rejected "
            f"({report.rejected_fraction():.2%}) exceeds the error budget "
            f"({config.thresholds.error_budget:.2%})"
        )

    subjects = []
    for sid in order:
        rec = records[sid]
        subjects.append(
            Subject(
                record=rec,
                onsets=onsets[sid],
                state=build_state_matrix(onsets[sid], registry, t_max),
                follow_up=build_follow_up(rec.censor_age, t_max),
            )
        )
    report.n_subjects = len(subjects)
    return Cohort(registry, t_max, subjects), report
