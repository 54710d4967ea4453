"""Cluster annotation: descriptive tables, association tests, and
one-vs-rest logistic log-odds-ratio grids.

Test choice follows one rule: Fisher's exact test iff the table is 2x2 and
some expected count is below 5, otherwise Pearson chi-square (with a
small-count warning on larger tables).  Logistic fits are one-vs-rest, one
binary model per cluster, so fitted membership probabilities need not sum
to 1 across clusters.  All tests read only shared immutable arrays and may
run concurrently; here they run sequentially.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from pathlib import Path

import numpy as np

from .cohort import Cohort
from .config import AnalysisConfig
from .errors import DataError
from .hac import Partition
from .special import chi2_sf, normal_sf

# -- association tests ------------------------------------------------------


@dataclass(frozen=True)
class TestResult:
    method: str  # chi2 | fisher2x2 | kruskal_wallis
    statistic: float
    df: int | None
    p_value: float
    warnings: tuple[str, ...] = ()


class ContingencyTable:
    """r x c count table with labels; r, c >= 2."""

    def __init__(self, counts, row_labels=None, col_labels=None):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] < 2 or counts.shape[1] < 2:
            raise ValueError(f"need an r x c table with r,c >= 2, got shape {counts.shape}")
        if (counts < 0).any():
            raise ValueError("negative counts")
        self.counts = counts
        r, c = counts.shape
        self.row_labels = list(row_labels) if row_labels is not None else [str(i) for i in range(r)]
        self.col_labels = list(col_labels) if col_labels is not None else [str(j) for j in range(c)]

    @property
    def shape(self):
        return self.counts.shape

    def total(self) -> int:
        return int(self.counts.sum())

    def expected(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        cols = self.counts.sum(axis=0, keepdims=True)
        return rows * cols / self.counts.sum()


def chi_square_test(table: ContingencyTable) -> TestResult:
    """Pearson chi-square on an r x c table, df = (r-1)(c-1)."""
    counts = table.counts
    if (counts.sum(axis=1) == 0).any() or (counts.sum(axis=0) == 0).any():
        raise DataError("chi-square needs all row and column totals > 0")
    expected = table.expected()
    stat = float(((counts - expected) ** 2 / expected).sum())
    r, c = counts.shape
    df = (r - 1) * (c - 1)
    warnings = ()
    n_small = int((expected < 5).sum())
    if n_small:
        warnings = (f"{n_small} of {r * c} expected counts below 5",)
    return TestResult("chi2", stat, df, chi2_sf(stat, df), warnings)


def fisher_exact_2x2(table: ContingencyTable) -> TestResult:
    """Two-sided Fisher exact test: sum hypergeometric point probabilities
    not exceeding the observed table's, at fixed margins.  Exact rational
    arithmetic throughout."""
    if table.shape != (2, 2):
        raise ValueError(f"Fisher exact test needs a 2x2 table, got {table.shape}")
    a, b = int(table.counts[0, 0]), int(table.counts[0, 1])
    c, d = int(table.counts[1, 0]), int(table.counts[1, 1])
    r1, r2 = a + b, c + d
    c1 = a + c
    n = r1 + r2
    denom = comb(n, c1)

    def point(x: int) -> Fraction:
        return Fraction(comb(r1, x) * comb(r2, c1 - x), denom)

    p_obs = point(a)
    lo = max(0, c1 - r2)
    hi = min(r1, c1)
    p = sum((pt for x in range(lo, hi + 1) if (pt := point(x)) <= p_obs), Fraction(0))
    odds = float("nan") if b * c == 0 and a * d == 0 else (float("inf") if b * c == 0 else a * d / (b * c))
    return TestResult("fisher2x2", odds, None, float(min(p, Fraction(1))), ())


def _rank_with_ties(values: np.ndarray) -> np.ndarray:
    """Average ranks (1-based); equal values share the mean of their ranks."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.shape[0], dtype=np.float64)
    i = 0
    while i < values.shape[0]:
        j = i
        while j + 1 < values.shape[0] and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def kruskal_wallis(groups: list[np.ndarray]) -> TestResult:
    """Tie-corrected Kruskal-Wallis H; p from chi-square with df = g-1."""
    if len(groups) < 2:
        raise ValueError("need at least 2 groups")
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if any(g.shape[0] == 0 for g in groups):
        raise ValueError("empty group")
    pooled = np.concatenate(groups)
    n = pooled.shape[0]
    g = len(groups)
    ranks = _rank_with_ties(pooled)
    h = 0.0
    start = 0
    for grp in groups:
        m = grp.shape[0]
        r_sum = ranks[start : start + m].sum()
        h += r_sum * r_sum / m
        start += m
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    _, tie_counts = np.unique(pooled, return_counts=True)
    correction = 1.0 - float((tie_counts**3 - tie_counts).sum()) / (n**3 - n)
    if correction <= 0.0:  # every value identical
        return TestResult("kruskal_wallis", 0.0, g - 1, 1.0, ("all values identical",))
    h /= correction
    h = max(h, 0.0)
    p = 1.0 if h == 0.0 else chi2_sf(h, g - 1)
    return TestResult("kruskal_wallis", h, g - 1, p, ())


# -- logistic regression ----------------------------------------------------


@dataclass(frozen=True)
class LogisticFit:
    columns: tuple[str, ...]  # kept design columns, intercept first
    coef: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p_values: np.ndarray
    converged: bool
    n_iter: int
    unstable: bool  # not converged, or max |coef| > 10
    dropped: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()


def _drop_aliased(X: np.ndarray, columns: list[str]) -> tuple[np.ndarray, list[str], list[str]]:
    keep: list[int] = []
    dropped: list[str] = []
    for j in range(X.shape[1]):
        trial = X[:, keep + [j]]
        if np.linalg.matrix_rank(trial) == len(keep) + 1:
            keep.append(j)
        else:
            dropped.append(columns[j])
    return X[:, keep], [columns[j] for j in keep], dropped


def fit_logistic(
    y: np.ndarray,
    X: np.ndarray,
    columns: list[str] | None = None,
    max_iter: int = 100,
    tol: float = 1e-8,
    ridge: float = 1e-8,
) -> LogisticFit:
    """Maximum-likelihood logistic fit by iteratively reweighted least
    squares (Newton steps on the log-likelihood).

    X must already contain the intercept column.  Aliased columns are
    dropped with a warning; a ridge jitter is added to the information
    matrix only when a solve fails.  Stops when the coefficient max-change
    falls below tol.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, p) and y (n,)")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("y must be binary 0/1")
    if columns is None:
        columns = [f"x{j}" for j in range(X.shape[1])]
    warnings: list[str] = []

    X_k, kept, dropped = _drop_aliased(X, list(columns))
    if dropped:
        warnings.append(f"dropped aliased columns: {', '.join(dropped)}")
    n, p = X_k.shape

    beta = np.zeros(p)
    info = np.eye(p)
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        eta = np.clip(X_k @ beta, -35.0, 35.0)
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = mu * (1.0 - mu)
        grad = X_k.T @ (y - mu)
        info = (X_k * w[:, None]).T @ X_k
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            warnings.append("information matrix singular; ridge jitter applied")
            step = np.linalg.solve(info + ridge * np.eye(p), grad)
        beta = beta + step
        if np.abs(step).max() < tol:
            converged = True
            break

    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.inv(info + ridge * np.eye(p))
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, beta / se, np.inf * np.sign(beta))
    p_values = np.array([2.0 * normal_sf(abs(v)) if np.isfinite(v) else 0.0 for v in z])
    p_values = np.minimum(p_values, 1.0)
    unstable = (not converged) or bool(np.abs(beta).max() > 10.0)
    return LogisticFit(
        columns=tuple(kept),
        coef=beta,
        se=se,
        z=z,
        p_values=p_values,
        converged=converged,
        n_iter=n_iter,
        unstable=unstable,
        dropped=tuple(dropped),
        warnings=tuple(warnings),
    )


# -- design-matrix assembly -------------------------------------------------


@dataclass(frozen=True)
class DesignColumn:
    variable: str
    level: str  # "" for numeric columns, level name for dummies
    values: np.ndarray


def _reference_level(levels: tuple[str, ...], observed: list[str]) -> str:
    """Most frequent observed level; ties resolved by declared order."""
    counts = {lv: 0 for lv in levels}
    for v in observed:
        if v in counts:
            counts[v] += 1
    return max(levels, key=lambda lv: (counts[lv], -levels.index(lv)))


def _covariate_columns(cohort: Cohort, config: AnalysisConfig, warnings: list[str]) -> list[DesignColumn]:
    subjects = cohort.subjects
    cols: list[DesignColumn] = []
    for spec in config.covariates:
        raw = [s.record.covariates.get(spec.name) for s in subjects]
        if any(v is None for v in raw):
            warnings.append(f"covariate {spec.name!r} has missing values; excluded from logistic grids")
            continue
        if spec.kind == "numeric":
            cols.append(DesignColumn(spec.name, "", np.array(raw, dtype=np.float64)))
        else:
            ref = _reference_level(spec.levels, raw)
            arr = np.array(raw, dtype=object)
            for lv in spec.levels:
                if lv == ref:
                    continue
                cols.append(DesignColumn(spec.name, lv, (arr == lv).astype(np.float64)))
    cols.append(DesignColumn("multimorbidity_index", "", np.array([len(s.onsets) for s in subjects], dtype=np.float64)))
    if config.index_condition is not None:
        onset = [s.onsets.get(config.index_condition) for s in subjects]
        if any(v is None for v in onset):
            warnings.append(
                f"index condition {config.index_condition!r} missing for some subjects; onset age excluded from grids"
            )
        else:
            cols.append(DesignColumn("index_onset_age", "", np.array(onset, dtype=np.float64)))
    return cols


def _condition_columns(cohort: Cohort) -> list[DesignColumn]:
    subjects = cohort.subjects
    cols = []
    for code in cohort.registry.codes:
        ind = np.array([1.0 if code in s.onsets else 0.0 for s in subjects])
        cols.append(DesignColumn(code, "", ind))
    return cols


# -- heatmap grids ----------------------------------------------------------


@dataclass
class HeatmapGrid:
    """Rows = (variable, level), cols = clusters 1..k.  A cell is masked
    when its Wald p >= alpha, its column was dropped as aliased, or the
    whole cluster fit was unstable."""

    rows: list[tuple[str, str]]
    clusters: list[int]
    log_or: np.ndarray  # (R, K), nan where no estimate exists
    p: np.ndarray  # (R, K), nan where no estimate exists
    masked: np.ndarray  # (R, K) bool
    excluded_clusters: list[int]
    alpha: float

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["variable", "level", "cluster", "log_or", "p", "masked"])
            for r, (variable, level) in enumerate(self.rows):
                for c, cluster in enumerate(self.clusters):
                    w.writerow(
                        [
                            variable,
                            level,
                            cluster,
                            repr(float(self.log_or[r, c])),
                            repr(float(self.p[r, c])),
                            int(self.masked[r, c]),
                        ]
                    )


def _fit_grid(
    labels: np.ndarray,
    k: int,
    cols: list[DesignColumn],
    alpha: float,
    warnings: list[str],
    block: str,
) -> HeatmapGrid:
    rows = [(c.variable, c.level) for c in cols]
    names = [f"{c.variable}={c.level}" if c.level else c.variable for c in cols]
    R, K = len(rows), k
    log_or = np.full((R, K), np.nan)
    p = np.full((R, K), np.nan)
    masked = np.ones((R, K), dtype=bool)
    excluded: list[int] = []
    if R == 0:
        return HeatmapGrid(rows, list(range(1, k + 1)), log_or, p, masked, excluded, alpha)
    X = np.column_stack([np.ones(labels.shape[0])] + [c.values for c in cols])
    for c_idx, cluster in enumerate(range(1, k + 1)):
        y = (labels == cluster).astype(np.float64)
        fit = fit_logistic(y, X, columns=["intercept"] + names)
        for msg in fit.warnings:
            warnings.append(f"{block} grid, cluster {cluster}: {msg}")
        if fit.unstable:
            excluded.append(cluster)
            warnings.append(f"{block} grid, cluster {cluster}: unstable fit excluded")
            continue
        pos = {name: i for i, name in enumerate(fit.columns)}
        for r_idx, name in enumerate(names):
            if name not in pos:
                continue  # aliased column, stays masked
            i = pos[name]
            log_or[r_idx, c_idx] = fit.coef[i]
            p[r_idx, c_idx] = fit.p_values[i]
            masked[r_idx, c_idx] = not (fit.p_values[i] < alpha)
    return HeatmapGrid(rows, list(range(1, k + 1)), log_or, p, masked, excluded, alpha)


# -- descriptive tables -----------------------------------------------------


@dataclass(frozen=True)
class DescriptiveRow:
    variable: str
    level: str
    cells: tuple[str, ...]  # one per cluster, then total
    p: float | None  # carried on the first row of each variable


def _fmt_count(count: int, size: int) -> str:
    pct = 100.0 * count / size if size else 0.0
    return f"{count} ({pct:.1f}%)"


def _fmt_median_iqr(values: np.ndarray) -> str:
    if values.size == 0:
        return "-"
    med = np.median(values)
    q1, q3 = np.percentile(values, [25, 75])
    return f"{med:.1f} [{q1:.1f}, {q3:.1f}]"


def _categorical_test(counts: np.ndarray, warnings: list[str], variable: str) -> TestResult | None:
    """Fisher iff 2x2 with an expected count < 5, else chi-square.  Levels
    or clusters with zero totals are removed first."""
    keep_rows = counts.sum(axis=1) > 0
    keep_cols = counts.sum(axis=0) > 0
    trimmed = counts[np.ix_(keep_rows, keep_cols)]
    if trimmed.shape[0] < 2 or trimmed.shape[1] < 2:
        warnings.append(f"variable {variable!r}: association test skipped (degenerate table)")
        return None
    table = ContingencyTable(trimmed)
    if trimmed.shape == (2, 2) and (table.expected() < 5).any():
        return fisher_exact_2x2(table)
    return chi_square_test(table)


# -- cluster report ---------------------------------------------------------


@dataclass
class ClusterReport:
    partition: Partition
    cluster_sizes: np.ndarray
    covariate_rows: list[DescriptiveRow] = field(default_factory=list)
    condition_rows: list[DescriptiveRow] = field(default_factory=list)
    covariate_grid: HeatmapGrid | None = None
    condition_grid: HeatmapGrid | None = None
    warnings: list[str] = field(default_factory=list)

    def _write_rows(self, path: str | Path, rows: list[DescriptiveRow]) -> None:
        k = self.partition.k
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["variable", "level"] + [f"cluster_{i}" for i in range(1, k + 1)] + ["total", "p"])
            for row in rows:
                p = "" if row.p is None else repr(float(row.p))
                w.writerow([row.variable, row.level, *row.cells, p])

    def write_covariate_table(self, path: str | Path) -> None:
        self._write_rows(path, self.covariate_rows)

    def write_condition_table(self, path: str | Path) -> None:
        self._write_rows(path, self.condition_rows)


def _describe_categorical(
    variable: str,
    values: list[str | None],
    levels: tuple[str, ...],
    labels: np.ndarray,
    k: int,
    warnings: list[str],
) -> list[DescriptiveRow]:
    arr = np.array([v if v is not None else "" for v in values], dtype=object)
    counts = np.zeros((len(levels), k), dtype=np.int64)
    for r, lv in enumerate(levels):
        hit = arr == lv
        for c in range(1, k + 1):
            counts[r, c - 1] = int((hit & (labels == c)).sum())
    test = _categorical_test(counts, warnings, variable)
    sizes = np.bincount(labels, minlength=k + 1)[1:]
    rows = []
    for r, lv in enumerate(levels):
        cells = [_fmt_count(int(counts[r, c]), int(sizes[c])) for c in range(k)]
        cells.append(_fmt_count(int(counts[r].sum()), int(sizes.sum())))
        rows.append(
            DescriptiveRow(variable, lv, tuple(cells), test.p_value if (r == 0 and test is not None) else None)
        )
    return rows


def _describe_numeric(
    variable: str, values: np.ndarray, present: np.ndarray, labels: np.ndarray, k: int, warnings: list[str]
) -> list[DescriptiveRow]:
    cells = []
    groups = []
    for c in range(1, k + 1):
        sel = (labels == c) & present
        cells.append(_fmt_median_iqr(values[sel]))
        if sel.any():
            groups.append(values[sel])
    cells.append(_fmt_median_iqr(values[present]))
    p = None
    if len(groups) >= 2:
        test = kruskal_wallis(groups)
        p = test.p_value
    else:
        warnings.append(f"variable {variable!r}: association test skipped (fewer than 2 non-empty clusters)")
    return [DescriptiveRow(variable, "median [IQR]", tuple(cells), p)]


def annotate(cohort: Cohort, partition: Partition, config: AnalysisConfig) -> ClusterReport:
    """Build the full per-cluster report: descriptive tables for covariates
    and conditions, association tests across clusters, and the two
    significance-masked log-odds-ratio grids.  Cluster columns follow the
    partition's size ordering (1 = largest)."""
    if partition.n != len(cohort.subjects):
        raise ValueError("partition size does not match cohort")
    labels = partition.labels
    k = partition.k
    alpha = config.thresholds.heatmap_alpha
    report = ClusterReport(partition=partition, cluster_sizes=partition.sizes())
    subjects = cohort.subjects

    sizes = partition.sizes()
    report.covariate_rows.append(
        DescriptiveRow("n", "", tuple([str(int(s)) for s in sizes] + [str(int(sizes.sum()))]), None)
    )
    for spec in config.covariates:
        raw = [s.record.covariates.get(spec.name) for s in subjects]
        n_missing = sum(v is None for v in raw)
        if n_missing:
            report.warnings.append(f"covariate {spec.name!r}: {n_missing} missing values")
        if spec.kind == "numeric":
            present = np.array([v is not None for v in raw])
            values = np.array([v if v is not None else np.nan for v in raw], dtype=np.float64)
            report.covariate_rows.extend(
                _describe_numeric(spec.name, values, present, labels, k, report.warnings)
            )
        else:
            report.covariate_rows.extend(
                _describe_categorical(spec.name, raw, spec.levels, labels, k, report.warnings)
            )
    death = ["1" if s.record.death else "0" for s in subjects]
    report.covariate_rows.extend(_describe_categorical("death", death, ("0", "1"), labels, k, report.warnings))
    censor = np.array([float(s.record.censor_age) for s in subjects])
    report.covariate_rows.extend(
        _describe_numeric("censor_age", censor, np.ones(len(subjects), dtype=bool), labels, k, report.warnings)
    )
    mm = np.array([float(len(s.onsets)) for s in subjects])
    report.covariate_rows.extend(
        _describe_numeric("multimorbidity_index", mm, np.ones(len(subjects), dtype=bool), labels, k, report.warnings)
    )
    if config.index_condition is not None:
        onset = [s.onsets.get(config.index_condition) for s in subjects]
        present = np.array([v is not None for v in onset])
        values = np.array([v if v is not None else np.nan for v in onset], dtype=np.float64)
        if present.any():
            report.covariate_rows.extend(
                _describe_numeric("index_onset_age", values, present, labels, k, report.warnings)
            )

    for code in cohort.registry.codes:
        ind = ["1" if code in s.onsets else "0" for s in subjects]
        rows = _describe_categorical(code, ind, ("1", "0"), labels, k, report.warnings)
        report.condition_rows.extend(rows[:1])  # the "present" row carries the test

    cov_cols = _covariate_columns(cohort, config, report.warnings)
    cond_cols = _condition_columns(cohort)
    report.covariate_grid = _fit_grid(labels, k, cov_cols, alpha, report.warnings, "covariate")
    report.condition_grid = _fit_grid(labels, k, cond_cols, alpha, report.warnings, "condition")
    return report
