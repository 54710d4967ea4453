"""Cluster-count selection by the Hubert-Levin C index.

C = (S_w - S_min) / (S_max - S_min), where S_w sums the n_w within-cluster
dissimilarities and S_min / S_max sum the n_w smallest / largest values in
the whole matrix.  One full sort plus prefix sums serves every candidate
k, so a scan costs one sort plus O(n^2) per k.  Scores for different k are
independent and could run in parallel over the shared sorted array.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dissim import DissimilarityMatrix
from .hac import Dendrogram, Partition, ward_linkage


@dataclass(frozen=True)
class PartitionScore:
    k: int
    c_index: float
    n_w: int  # within-cluster pair count
    s_w: float
    s_min: float
    s_max: float


class CIndexScorer:
    """Reusable scorer over one condensed matrix."""

    def __init__(self, values: np.ndarray, n: int):
        self.values = np.asarray(values, dtype=np.float64)
        self.n = n
        self.n_pairs = self.values.shape[0]
        ordered = np.sort(self.values)
        self._prefix = np.concatenate(([0.0], np.cumsum(ordered)))
        self._total = float(self._prefix[-1])
        # condensed order is j-major: pair (i<j) lives at j(j-1)/2 + i
        self._j_idx = np.repeat(np.arange(n), np.arange(n))
        self._i_idx = (
            np.concatenate([np.arange(j) for j in range(n)]) if n > 1 else np.empty(0, dtype=np.int64)
        )

    def score(self, partition: Partition) -> PartitionScore:
        labels = partition.labels
        within = labels[self._i_idx] == labels[self._j_idx]
        n_w = int(within.sum())
        if n_w == 0:
            return PartitionScore(partition.k, 0.0, 0, 0.0, 0.0, 0.0)
        s_w = float(self.values[within].sum())
        s_min = float(self._prefix[n_w])
        s_max = float(self._total - self._prefix[self.n_pairs - n_w])
        spread = s_max - s_min
        c = 0.0 if spread <= 0.0 else (s_w - s_min) / spread
        c = min(max(c, 0.0), 1.0)  # rounding can overshoot the exact bounds by a ulp
        return PartitionScore(partition.k, c, n_w, s_w, s_min, s_max)


def c_index(d: DissimilarityMatrix, partition: Partition) -> PartitionScore:
    """Score one partition; defined for 2 <= k <= n-1."""
    if partition.n != d.n:
        raise ValueError(f"partition covers {partition.n} subjects, matrix has {d.n}")
    if not 2 <= partition.k <= d.n - 1:
        raise ValueError(f"C index needs 2 <= k <= n-1, got k={partition.k} with n={d.n}")
    return CIndexScorer(d.values, d.n).score(partition)


@dataclass(frozen=True)
class ScanResult:
    scores: list[PartitionScore]
    chosen_k: int
    local_minimum: bool  # False when the fallback global minimum was used
    dendrogram: Dendrogram

    @property
    def ks(self) -> list[int]:
        return [s.k for s in self.scores]

    @property
    def c_values(self) -> list[float]:
        return [s.c_index for s in self.scores]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "c_index", "n_w"])
            for s in self.scores:
                w.writerow([s.k, repr(float(s.c_index)), s.n_w])


def scan_k(
    d: DissimilarityMatrix,
    k_min: int,
    k_max: int,
    variant: str = "direct",
    dendrogram: Dendrogram | None = None,
) -> ScanResult:
    """Score every k in [k_min, k_max] and pick the smallest k that is a
    strict interior local minimum of the C index; fall back to the global
    minimum (smallest k on ties) when no interior minimum exists."""
    n = d.n
    if not 2 <= k_min < k_max <= n - 1:
        raise ValueError(f"need 2 <= k_min < k_max <= n-1, got [{k_min}, {k_max}] with n={n}")
    if dendrogram is None:
        dendrogram = ward_linkage(d, variant=variant)
    scorer = CIndexScorer(d.values, n)
    scores = [scorer.score(dendrogram.cut(k)) for k in range(k_min, k_max + 1)]

    c_values = [s.c_index for s in scores]
    chosen = None
    for idx in range(1, len(scores) - 1):
        if c_values[idx] < c_values[idx - 1] and c_values[idx] < c_values[idx + 1]:
            chosen = scores[idx].k
            break
    local = chosen is not None
    if chosen is None:
        chosen = scores[int(np.argmin(c_values))].k
    return ScanResult(scores=scores, chosen_k=chosen, local_minimum=local, dendrogram=dendrogram)
