"""Association tests, logistic fits, and annotation grids vs oracles."""

import dataclasses
import math

import numpy as np
import pytest

from multistate.cohort import Cohort, EventRecord, SubjectRecord, register_conditions
from multistate.config import config_from_dict
from multistate.errors import DataError
from multistate.hac import Partition
from multistate.stats import (
    ContingencyTable,
    annotate,
    chi_square_test,
    fisher_exact_2x2,
    fit_logistic,
    kruskal_wallis,
    _categorical_test,
    _reference_level,
)

from oracles import (
    fisher_enumeration,
    kruskal_oracle,
    logistic_loglik,
    logistic_loglik_grad,
    permutation_chi2_p,
)

# frozen 2x10 sex-by-cluster style table; permutation oracle agreement
# verified to ~1e-3, far inside 3 Monte-Carlo standard errors at 2e4 draws
_TABLE_2X10 = [
    [29, 24, 24, 28, 23, 26, 27, 17, 14, 18],
    [18, 27, 28, 14, 21, 27, 16, 26, 15, 21],
]


# -- chi-square -----------------------------------------------------------------


def test_chi2_independence_table():
    res = chi_square_test(ContingencyTable([[10, 10], [10, 10]]))
    assert res.statistic == 0.0
    assert res.p_value == 1.0
    assert res.df == 1
    assert res.method == "chi2"


def test_chi2_hand_computed_statistic():
    res = chi_square_test(ContingencyTable([[20, 5], [5, 20]]))
    assert res.statistic == pytest.approx(18.0, abs=1e-12)
    assert res.df == 1
    assert res.p_value == pytest.approx(2.209e-05, rel=1e-3)


def test_chi2_matches_permutation_oracle():
    res = chi_square_test(ContingencyTable(_TABLE_2X10))
    perm = permutation_chi2_p(_TABLE_2X10, 20000, seed=123)
    mc_se = math.sqrt(perm * (1 - perm) / 20000)
    assert abs(res.p_value - perm) < 3 * mc_se


def test_chi2_guards_and_warning():
    with pytest.raises(DataError):
        chi_square_test(ContingencyTable([[0, 0], [5, 5]]))
    res = chi_square_test(ContingencyTable([[1, 30], [2, 40], [1, 35]]))
    assert any("expected counts below 5" in w for w in res.warnings)
    with pytest.raises(ValueError):
        ContingencyTable([[1, 2]])
    with pytest.raises(ValueError):
        ContingencyTable([[1, -2], [3, 4]])


# -- Fisher ----------------------------------------------------------------------


def test_fisher_known_table():
    res = fisher_exact_2x2(ContingencyTable([[1, 9], [11, 3]]))
    assert res.method == "fisher2x2"
    assert res.p_value == pytest.approx(0.00276, abs=5e-6)
    assert res.p_value == pytest.approx(7462 / 2704156, abs=1e-15)


def test_fisher_symmetric_table_is_one():
    assert fisher_exact_2x2(ContingencyTable([[5, 5], [5, 5]])).p_value == 1.0


def test_fisher_matches_enumeration_oracle(rng):
    for _ in range(200):
        t = rng.integers(0, 25, size=(2, 2))
        if t.sum(axis=0).min() == 0 or t.sum(axis=1).min() == 0:
            continue
        ours = fisher_exact_2x2(ContingencyTable(t)).p_value
        oracle = fisher_enumeration(*map(int, t.reshape(-1)))
        assert abs(ours - oracle) <= 1e-12


def test_fisher_odds_ratio_and_guards():
    res = fisher_exact_2x2(ContingencyTable([[30, 10], [15, 45]]))
    assert res.statistic == pytest.approx(9.0)
    assert fisher_exact_2x2(ContingencyTable([[5, 0], [2, 3]])).statistic == float("inf")
    with pytest.raises(ValueError):
        fisher_exact_2x2(ContingencyTable([[1, 2, 3], [4, 5, 6]]))


# -- Kruskal-Wallis ----------------------------------------------------------------


def test_kw_hand_computed():
    res = kruskal_wallis([np.array([1, 2, 3]), np.array([4, 5, 6]), np.array([7, 8, 9])])
    assert res.statistic == pytest.approx(7.2, abs=1e-10)
    assert res.df == 2
    assert res.method == "kruskal_wallis"


def test_kw_identical_groups_score_zero():
    res = kruskal_wallis([np.array([3.0, 1.0, 2.0]), np.array([2.0, 3.0, 1.0])])
    assert res.statistic == pytest.approx(0.0, abs=1e-12)
    assert res.p_value == 1.0


def test_kw_matches_tie_corrected_oracle(rng):
    for _ in range(50):
        g = int(rng.integers(2, 5))
        groups = [rng.integers(0, 6, size=rng.integers(3, 12)).astype(float) for _ in range(g)]
        res = kruskal_wallis(groups)
        assert res.statistic == pytest.approx(kruskal_oracle(groups), abs=1e-10)


def test_kw_degenerate_and_guards():
    res = kruskal_wallis([np.array([2.0, 2.0]), np.array([2.0, 2.0, 2.0])])
    assert res.statistic == 0.0 and res.p_value == 1.0
    assert "all values identical" in res.warnings[0]
    with pytest.raises(ValueError):
        kruskal_wallis([np.array([1.0])])
    with pytest.raises(ValueError):
        kruskal_wallis([np.array([1.0]), np.array([])])


# -- logistic regression -------------------------------------------------------------


def _expand_2x2(a, b, c, d):
    """x=1 rows first: a successes, b failures; then x=0: c, d."""
    y = np.concatenate([np.ones(a), np.zeros(b), np.ones(c), np.zeros(d)])
    x = np.concatenate([np.ones(a + b), np.zeros(c + d)])
    return y, np.column_stack([np.ones_like(x), x])


def test_logistic_single_binary_matches_log_odds_ratio():
    a, b, c, d = 30, 10, 15, 45
    y, X = _expand_2x2(a, b, c, d)
    fit = fit_logistic(y, X, columns=["intercept", "x"])
    assert fit.converged and not fit.unstable
    assert fit.coef[1] == pytest.approx(math.log(a * d / (b * c)), abs=1e-8)
    assert fit.coef[0] == pytest.approx(math.log(c / d), abs=1e-8)


def test_logistic_gradient_at_optimum(rng):
    n = 500
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.integers(0, 2, size=n)])
    eta = 0.3 - 0.8 * X[:, 1] + 0.5 * X[:, 2]
    y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    fit = fit_logistic(y, X)
    assert fit.converged
    grad = logistic_loglik_grad(fit.coef, X, y)
    assert np.abs(grad).max() < 1e-6
    # finite-difference check of the same gradient
    h = 1e-6
    fd = np.empty_like(fit.coef)
    for j in range(fit.coef.shape[0]):
        e = np.zeros_like(fit.coef)
        e[j] = h
        fd[j] = (logistic_loglik(fit.coef + e, X, y) - logistic_loglik(fit.coef - e, X, y)) / (2 * h)
    assert np.abs(fd - grad).max() < 1e-5


def test_logistic_null_model_slopes_vanish(rng):
    hits = total = 0
    for _ in range(30):
        n = 2000
        X = np.column_stack([np.ones(n), rng.normal(size=n), rng.integers(0, 2, size=n), rng.normal(size=n)])
        y = (rng.random(n) < 0.4).astype(float)
        fit = fit_logistic(y, X)
        assert fit.converged
        assert np.abs(fit.coef[1:]).max() < 0.4  # slope SE ~0.09 here; >4 sigma never expected
        hits += int((fit.p_values[1:] < 0.05).sum())
        total += 3
    # false-positive count ~ Binomial(90, 0.05); 13+ has probability < 3e-4
    assert hits <= 12


def test_logistic_aliased_column_dropped(rng):
    n = 200
    x = rng.normal(size=n)
    X = np.column_stack([np.ones(n), x, x * 2.0, np.full(n, 3.0)])
    y = (rng.random(n) < 0.5).astype(float)
    fit = fit_logistic(y, X, columns=["intercept", "x", "x_twice", "const"])
    assert fit.dropped == ("x_twice", "const")
    assert fit.columns == ("intercept", "x")
    assert any("aliased" in w for w in fit.warnings)


def test_logistic_separation_flags_unstable(rng):
    n = 80
    x = np.concatenate([np.ones(40), np.zeros(40)])
    y = x.copy()
    fit = fit_logistic(y, np.column_stack([np.ones(n), x]))
    assert fit.unstable


def test_logistic_input_validation(rng):
    with pytest.raises(ValueError):
        fit_logistic(np.array([0.0, 2.0]), np.ones((2, 1)))
    with pytest.raises(ValueError):
        fit_logistic(np.array([0.0, 1.0]), np.ones((3, 1)))


def test_logistic_intercept_only_recovers_base_rate(rng):
    y = (rng.random(400) < 0.3).astype(float)
    fit = fit_logistic(y, np.ones((400, 1)))
    expected = math.log(y.mean() / (1 - y.mean()))
    assert fit.coef[0] == pytest.approx(expected, abs=1e-8)


# -- annotate ---------------------------------------------------------------------


def _annotation_config(index_condition=None):
    return config_from_dict(
        {
            "t_max": 100,
            "conditions": ["x", "y", "z"],
            "index_condition": index_condition,
            "covariates": {
                "sex": {"type": "categorical", "levels": ["F", "M"]},
                "bmi": {"type": "numeric"},
            },
        }
    )


def _annotated_cohort(rng, n=240, x_rates=(0.65, 0.2), all_have_x=False):
    """Two planted groups of equal size with group-dependent rates."""
    registry = register_conditions(["x", "y", "z"])
    half = n // 2
    labels = np.array([1] * half + [2] * (n - half))
    records, events = [], []
    for i in range(n):
        grp = 0 if i < half else 1
        sid = f"P{i:03d}"
        sex = "F" if rng.random() < (0.7 if grp == 0 else 0.4) else "M"
        bmi = float(rng.normal(27.0 if grp == 0 else 24.0, 2.0))
        records.append(
            SubjectRecord(sid, int(rng.integers(60, 100)), bool(rng.random() < 0.2), {"sex": sex, "bmi": bmi})
        )
        if all_have_x or rng.random() < x_rates[grp]:
            events.append(EventRecord(sid, "x", int(rng.integers(30, 60))))
        for code, rate in (("y", 0.3), ("z", 0.3)):
            if rng.random() < rate:
                events.append(EventRecord(sid, code, int(rng.integers(20, 80))))
    cohort = Cohort.from_records(registry, 100, records, events)
    return cohort, Partition(k=2, labels=labels)


def test_annotate_descriptive_structure(tmp_path, rng):
    cohort, partition = _annotated_cohort(rng)
    report = annotate(cohort, partition, _annotation_config())
    variables = [r.variable for r in report.covariate_rows]
    assert variables == [
        "n", "sex", "sex", "bmi", "death", "death", "censor_age", "multimorbidity_index",
    ]
    n_row = report.covariate_rows[0]
    assert n_row.cells == ("120", "120", "240")
    sex_f = report.covariate_rows[1]
    assert sex_f.level == "F" and sex_f.p is not None
    assert report.covariate_rows[2].p is None  # p only on the first row
    count, rest = sex_f.cells[0].split(" ", 1)
    assert rest == f"({100.0 * int(count) / 120:.1f}%)"
    bmi_row = report.covariate_rows[3]
    assert bmi_row.level == "median [IQR]" and "[" in bmi_row.cells[0]

    assert [r.variable for r in report.condition_rows] == ["x", "y", "z"]
    assert all(r.level == "1" and r.p is not None for r in report.condition_rows)

    out = tmp_path / "cov.csv"
    report.write_covariate_table(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "variable,level,cluster_1,cluster_2,total,p"
    assert len(lines) == 1 + len(report.covariate_rows)
    out2 = tmp_path / "cond.csv"
    report.write_condition_table(out2)
    assert len(out2.read_text().splitlines()) == 4


def test_annotate_planted_enrichment_is_unmasked_positive(rng):
    cohort, partition = _annotated_cohort(rng)
    report = annotate(cohort, partition, _annotation_config())
    grid = report.condition_grid
    r = grid.rows.index(("x", ""))
    c = grid.clusters.index(1)
    assert not grid.masked[r, c]
    assert grid.log_or[r, c] > 0
    assert grid.p[r, c] < 0.05


def test_annotate_masking_invariant_and_superset(rng):
    cohort, partition = _annotated_cohort(rng)
    config = _annotation_config()
    report = annotate(cohort, partition, config)
    loose = dataclasses.replace(
        config, thresholds=dataclasses.replace(config.thresholds, heatmap_alpha=1.0)
    )
    report_loose = annotate(cohort, partition, loose)
    for tight_grid, loose_grid in (
        (report.covariate_grid, report_loose.covariate_grid),
        (report.condition_grid, report_loose.condition_grid),
    ):
        with_p = ~np.isnan(tight_grid.p)
        assert np.all(tight_grid.p[~tight_grid.masked & with_p] < tight_grid.alpha)
        assert np.all(tight_grid.p[tight_grid.masked & with_p] >= tight_grid.alpha)
        # relaxing the threshold can only unmask cells
        assert not np.any(~tight_grid.masked & loose_grid.masked)


def test_annotate_covariate_grid_rows(rng):
    cohort, partition = _annotated_cohort(rng, all_have_x=True)
    report = annotate(cohort, partition, _annotation_config(index_condition="x"))
    rows = report.covariate_grid.rows
    assert ("bmi", "") in rows
    assert ("multimorbidity_index", "") in rows
    assert ("index_onset_age", "") in rows
    sex_rows = [r for r in rows if r[0] == "sex"]
    assert len(sex_rows) == 1  # one non-reference level
    assert any(r.variable == "index_onset_age" for r in report.covariate_rows)


def test_annotate_index_condition_missing_excluded(rng):
    cohort, partition = _annotated_cohort(rng)  # not everyone has x
    report = annotate(cohort, partition, _annotation_config(index_condition="x"))
    assert ("index_onset_age", "") not in report.covariate_grid.rows
    assert any("onset age excluded" in w for w in report.warnings)
    assert any(r.variable == "index_onset_age" for r in report.covariate_rows)


def test_annotate_missing_covariate_value_excluded_from_grid(rng):
    cohort, partition = _annotated_cohort(rng, n=60)
    rec = cohort.subjects[0].record
    patched = dataclasses.replace(rec, covariates={**rec.covariates, "bmi": None})
    subjects = [dataclasses.replace(cohort.subjects[0], record=patched)] + list(cohort.subjects[1:])
    cohort2 = Cohort(cohort.registry, cohort.t_max, subjects)
    report = annotate(cohort2, partition, _annotation_config())
    assert ("bmi", "") not in report.covariate_grid.rows
    assert any("missing values" in w for w in report.warnings)


def test_annotate_unstable_cluster_excluded(rng):
    # cluster 2 made perfectly separable through condition z
    cohort, partition = _annotated_cohort(rng, n=120)
    registry = cohort.registry
    records = [s.record for s in cohort.subjects]
    events = []
    for s in cohort.subjects:
        keep = {c: a for c, a in s.onsets.items() if c != "z"}
        for c, a in keep.items():
            events.append(EventRecord(s.record.subject_id, c, a))
    for s, lbl in zip(cohort.subjects, partition.labels):
        if lbl == 2:
            events.append(EventRecord(s.record.subject_id, "z", 40))
    cohort2 = Cohort.from_records(registry, 100, records, events)
    report = annotate(cohort2, partition, _annotation_config())
    grid = report.condition_grid
    assert 2 in grid.excluded_clusters
    col = grid.clusters.index(2)
    assert grid.masked[:, col].all()
    assert any("unstable fit excluded" in w for w in report.warnings)


def test_annotate_partition_mismatch(rng):
    cohort, _ = _annotated_cohort(rng, n=20)
    with pytest.raises(ValueError):
        annotate(cohort, Partition(k=2, labels=np.array([1, 2])), _annotation_config())


def test_heatmap_csv(tmp_path, rng):
    cohort, partition = _annotated_cohort(rng, n=80)
    report = annotate(cohort, partition, _annotation_config())
    path = tmp_path / "grid.csv"
    report.condition_grid.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "variable,level,cluster,log_or,p,masked"
    assert len(lines) == 1 + 3 * 2  # three conditions, two clusters
    var, level, cluster, log_or, p, masked = lines[1].split(",")
    assert var == "x" and cluster == "1" and masked in ("0", "1")


# -- helper units ------------------------------------------------------------------


def test_reference_level_rule():
    assert _reference_level(("a", "b", "c"), ["b", "b", "a"]) == "b"
    assert _reference_level(("a", "b"), ["a", "b"]) == "a"  # tie: declared order
    assert _reference_level(("a", "b"), []) == "a"


def test_categorical_test_dispatch():
    warnings = []
    sparse = _categorical_test(np.array([[2, 1], [1, 3]]), warnings, "v")
    assert sparse.method == "fisher2x2"
    big = _categorical_test(np.array([[20, 20], [20, 25]]), warnings, "v")
    assert big.method == "chi2"
    wide = _categorical_test(np.array([[2, 1, 9], [1, 3, 8]]), warnings, "v")
    assert wide.method == "chi2"  # Fisher only for 2x2
    trimmed = _categorical_test(np.array([[0, 0], [10, 20], [30, 5]]), warnings, "v")
    assert trimmed is not None and trimmed.method == "chi2"
    assert _categorical_test(np.array([[0, 0], [10, 20]]), warnings, "v") is None
    assert any("degenerate table" in w for w in warnings)
