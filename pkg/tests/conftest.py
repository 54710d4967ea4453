"""Shared fixtures and small cohort builders for the test suite."""

import numpy as np
import pytest

from multistate.cohort import (
    Cohort,
    EventRecord,
    SubjectRecord,
    build_follow_up,
    build_state_matrix,
    register_conditions,
)


def make_subject_pair(t_max=11):
    """Two fully-observed subjects with mirrored onsets on an 11-age grid.

    Subject i: hyp at age 1, dm at age 2.  Subject j: dm at age 1, hyp at
    age 2.  With k=2 conditions this pair has Q=18, P=2, t*=22 and a
    composite dissimilarity of exactly 0.1.
    """
    reg = register_conditions(["dm", "hyp"])
    mi = build_state_matrix({"hyp": 1, "dm": 2}, reg, t_max)
    mj = build_state_matrix({"dm": 1, "hyp": 2}, reg, t_max)
    fi = build_follow_up(t_max, t_max)
    fj = build_follow_up(t_max, t_max)
    return reg, mi, fi, mj, fj


def random_subject(rng, registry, t_max):
    """Random onsets (each condition present w.p. 0.5) and censor age."""
    onsets = {
        code: int(rng.integers(0, t_max))
        for code in registry.codes
        if rng.random() < 0.5
    }
    censor = int(rng.integers(1, t_max + 1))
    state = build_state_matrix(onsets, registry, t_max)
    follow = build_follow_up(censor, t_max)
    return onsets, state, follow, censor


def random_cohort(rng, n, k=4, t_max=30):
    """Cohort of n random subjects over k conditions c0..c{k-1}."""
    registry = register_conditions([f"c{i}" for i in range(k)])
    subject_records = []
    events = []
    for idx in range(n):
        sid = f"S{idx:04d}"
        censor = int(rng.integers(1, t_max + 1))
        subject_records.append(SubjectRecord(sid, censor, death=bool(rng.random() < 0.2)))
        for code in registry.codes:
            if rng.random() < 0.5:
                events.append(EventRecord(sid, code, int(rng.integers(0, t_max))))
    return Cohort.from_records(registry, t_max, subject_records, events)


@pytest.fixture
def rng():
    return np.random.default_rng(20260813)
