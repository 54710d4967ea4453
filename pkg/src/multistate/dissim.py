"""Censoring-aware composite Jaccard dissimilarity between subjects.

For one pair, counts are taken only over the common follow-up window
``w = fi AND fj``: Q sums co-present condition-age cells, P co-absent cells,
and ``t* = k * |w|`` is the total cell count.  The dissimilarity is
``1 - Q / (t* - P)``, with the all-healthy degenerate case ``t* == P``
defined as 0 (two fully disease-free observed histories are identical).
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernel import jaccard_block
from .cohort import Cohort, FollowUp, StateMatrix
from .errors import DataError

MAGIC = b"MSA1"


@dataclass(frozen=True)
class PairOverlapCounts:
    q: int  # positive co-matches over all conditions
    p: int  # negative co-matches over all conditions
    t_star: int  # k * length of the common follow-up window


def condensed_index(i: int, j: int) -> int:
    """Index of pair (i, j) in the condensed lower triangle (i < j)."""
    if i == j:
        raise ValueError("no self-pairs in a condensed matrix")
    if i > j:
        i, j = j, i
    return j * (j - 1) // 2 + i


def pair_counts(mi: StateMatrix, fi: FollowUp, mj: StateMatrix, fj: FollowUp) -> PairOverlapCounts:
    """Overlap counts for one subject pair via bitwise AND / popcount."""
    if (mi.t_max, mi.k) != (mj.t_max, mj.k):
        raise ValueError(f"state matrix shapes differ: {(mi.t_max, mi.k)} vs {(mj.t_max, mj.k)}")
    w = fi.words & fj.words
    q = int(np.bitwise_count(mi.words & mj.words & w).sum())
    p = int(np.bitwise_count(~(mi.words | mj.words) & w).sum())
    t_star = mi.k * int(np.bitwise_count(w).sum())
    return PairOverlapCounts(q=q, p=p, t_star=t_star)


def composite_jaccard(counts: PairOverlapCounts) -> float:
    """Dissimilarity 1 - Q/(t* - P), or 0 when the window holds no disease.

    Computed as (t* - P - Q) / (t* - P) so the result is the exactly-rounded
    double of the rational value.
    """
    denom = counts.t_star - counts.p
    if denom <= 0:
        return 0.0
    return (denom - counts.q) / denom


def simple_sequence_jaccard(xi: list, xj: list) -> float:
    """Jaccard dissimilarity of two single-track state-label sequences.

    Ages match when the labels are equal and non-null (None or "" is the
    healthy state).  Kept as the reference point that motivates the
    composite index; not used by the pipeline itself.
    """
    if len(xi) != len(xj):
        raise ValueError("sequences must have equal length")
    q = r_plus_s = 0
    for a, b in zip(xi, xj):
        a_null = a is None or a == "" or a == 0
        b_null = b is None or b == "" or b == 0
        if a_null and b_null:
            continue  # p: negative match, omitted by Jaccard
        elif not a_null and not b_null and a == b:
            q += 1
        else:
            r_plus_s += 1
    total = q + r_plus_s
    if total == 0:
        return 0.0
    return r_plus_s / total


@dataclass
class DissimilarityMatrix:
    """Condensed lower-triangular pairwise matrix.

    values[j*(j-1)//2 + i] holds d(i, j) for i < j.
    """

    n: int
    values: np.ndarray  # float64, length n*(n-1)//2

    def __post_init__(self):
        expected = self.n * (self.n - 1) // 2
        if self.values.shape != (expected,):
            raise ValueError(f"expected {expected} condensed values, got {self.values.shape}")

    def get(self, i: int, j: int) -> float:
        if i == j:
            return 0.0
        return float(self.values[condensed_index(i, j)])

    def to_square(self) -> np.ndarray:
        d = np.zeros((self.n, self.n))
        for j in range(1, self.n):
            base = j * (j - 1) // 2
            d[:j, j] = self.values[base : base + j]
        return d + d.T

    # -- file formats --------------------------------------------------------

    def save_binary(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", self.n))
            fh.write(self.values.astype("<f8", copy=False).tobytes())

    @classmethod
    def load_binary(cls, path: str | Path) -> "DissimilarityMatrix":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != MAGIC:
                raise DataError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
            (n,) = struct.unpack("<Q", fh.read(8))
            data = np.frombuffer(fh.read(), dtype="<f8")
        expected = n * (n - 1) // 2
        if data.shape[0] != expected:
            raise DataError(f"{path}: expected {expected} values for n={n}, found {data.shape[0]}")
        return cls(n=int(n), values=data.astype(np.float64))

    def write_text(self, path: str | Path, ids: list[str]) -> None:
        """Full square matrix as delimited text with a subject-id header."""
        if len(ids) != self.n:
            raise ValueError("need one id per subject")
        square = self.to_square()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("subject_id," + ",".join(ids) + "\n")
            for sid, row in zip(ids, square):
                fh.write(sid + "," + ",".join(repr(float(v)) for v in row) + "\n")


def _block_bounds(n_pairs: int, n_blocks: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, n_pairs, n_blocks + 1).astype(np.int64)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def pairwise_matrix(cohort: Cohort, workers: int = 1) -> DissimilarityMatrix:
    """Composite Jaccard dissimilarities for every subject pair.

    Worker threads fill disjoint contiguous slices of the condensed array;
    every value is a pure function of one pair, so the output is identical
    for any worker count.
    """
    n = len(cohort)
    if n == 0:
        raise DataError("empty cohort")
    states, follow = cohort.packed()
    k = cohort.registry.k
    words = follow.shape[1]
    n_pairs = n * (n - 1) // 2
    out = np.empty(n_pairs, dtype=np.float64)
    if n_pairs == 0:
        return DissimilarityMatrix(n=n, values=out)

    workers = max(1, int(workers))
    if workers == 1 or n_pairs < 4096:
        jaccard_block(out, states, follow, k, words, 0, n_pairs)
    else:
        blocks = _block_bounds(n_pairs, workers * 8)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = [
                pool.submit(jaccard_block, out, states, follow, k, words, start, stop)
                for start, stop in blocks
            ]
            for f in futs:
                f.result()
    return DissimilarityMatrix(n=n, values=out)
