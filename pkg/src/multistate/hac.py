"""Agglomerative Ward clustering on a precomputed dissimilarity matrix.

The nearest-neighbor-chain algorithm runs in O(n^2) time; Ward's update is
reducible, so the merge set equals the naive greedy algorithm's.  The
Lance-Williams recurrence is applied to the dissimilarities as given
("direct" variant); the "squared" variant squares the input first.  The
update coefficients are a_i = (n_i+n_k)/T, a_j = (n_j+n_k)/T and
b = -n_k/T with T = n_i+n_j+n_k.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dissim import DissimilarityMatrix
from .errors import DataError


@dataclass(frozen=True)
class Partition:
    """Flat clustering with labels 1..k, 1 being the largest cluster."""

    k: int
    labels: np.ndarray  # (n,) int64

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k + 1)[1:]

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


class Dendrogram:
    """Ordered merge list; leaves 0..n-1, merge t creates id n+t."""

    def __init__(self, n: int, merges: np.ndarray):
        if merges.shape != (max(n - 1, 0), 4):
            raise ValueError(f"expected {max(n - 1, 0)} merges for n={n}")
        self.n = n
        self.merges = merges  # columns: left id, right id, height, size

    def heights(self) -> np.ndarray:
        return self.merges[:, 2]

    def cut(self, k: int) -> Partition:
        """Undo the last k-1 merges and relabel by decreasing size."""
        n = self.n
        if not 1 <= k <= n:
            raise ValueError(f"k must lie in [1, {n}], got {k}")
        parent = np.arange(2 * n - 1)

        def find(x: int) -> int:
            root = x
            while parent[root] != root:
                root = parent[root]
            while parent[x] != root:
                parent[x], x = root, parent[x]
            return root

        for t in range(n - k):
            left, right = int(self.merges[t, 0]), int(self.merges[t, 1])
            new = n + t
            parent[find(left)] = new
            parent[find(right)] = new

        roots = np.array([find(i) for i in range(n)])
        groups: dict[int, list[int]] = {}
        for leaf, root in enumerate(roots):
            groups.setdefault(int(root), []).append(leaf)
        ordered = sorted(groups.values(), key=lambda m: (-len(m), m[0]))
        labels = np.zeros(n, dtype=np.int64)
        for label, members in enumerate(ordered, start=1):
            labels[members] = label
        return Partition(k=k, labels=labels)

    # -- export ---------------------------------------------------------------

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "left", "right", "height", "size"])
            for t, (left, right, height, size) in enumerate(self.merges):
                w.writerow([t, int(left), int(right), repr(float(height)), int(size)])

    @classmethod
    def read_csv(cls, path: str | Path) -> "Dendrogram":
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                rows.append((float(row["left"]), float(row["right"]), float(row["height"]), float(row["size"])))
        merges = np.array(rows, dtype=np.float64).reshape(len(rows), 4)
        return cls(n=len(rows) + 1, merges=merges)

    def to_tree_text(self, names: list[str] | None = None) -> str:
        """Nested-parenthesis serialization: leaf -> name, merge -> (l,r):height."""
        n = self.n
        if names is None:
            names = [str(i) for i in range(n)]
        if n == 1:
            return names[0] + ";"
        parts: dict[int, str] = {}
        for t, (left, right, height, _size) in enumerate(self.merges):
            left, right = int(left), int(right)
            ls = parts.pop(left) if left >= n else names[left]
            rs = parts.pop(right) if right >= n else names[right]
            parts[n + t] = f"({ls},{rs}):{float(height)!r}"
        return parts[2 * n - 2] + ";"


def ward_linkage(d: DissimilarityMatrix | np.ndarray, n: int | None = None, variant: str = "direct") -> Dendrogram:
    """Ward dendrogram via the nearest-neighbor chain.

    Accepts a DissimilarityMatrix or a raw condensed array plus n.  Among
    equal nearest-neighbor candidates the smallest slot index wins, which
    keeps runs reproducible.
    """
    if isinstance(d, DissimilarityMatrix):
        values, n = d.values, d.n
    else:
        if n is None:
            raise ValueError("n is required with a raw condensed array")
        values = np.asarray(d, dtype=np.float64)
    if np.isnan(values).any():
        raise DataError("NaN in input dissimilarities")
    if variant not in ("direct", "squared"):
        raise ValueError(f"unknown ward variant {variant!r}")

    if n == 1:
        return Dendrogram(n=1, merges=np.empty((0, 4)))

    D = np.full((n, n), np.inf)
    for j in range(1, n):
        base = j * (j - 1) // 2
        D[:j, j] = values[base : base + j]
        D[j, :j] = values[base : base + j]
    np.fill_diagonal(D, np.inf)
    if variant == "squared":
        finite = np.isfinite(D)
        D[finite] = D[finite] ** 2

    size = np.ones(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    chain = np.empty(n + 1, dtype=np.int64)
    chain_len = 0
    raw: list[tuple[int, int, float]] = []

    for _ in range(n - 1):
        if chain_len == 0:
            chain[0] = int(np.argmax(active))
            chain_len = 1
        while True:
            x = int(chain[chain_len - 1])
            row = D[x]
            y = int(np.argmin(row))
            if chain_len > 1:
                prev = int(chain[chain_len - 2])
                if row[prev] == row[y]:
                    y = prev
                if y == prev:
                    break
            chain[chain_len] = y
            chain_len += 1
        chain_len -= 2
        dxy = float(D[x, y])
        raw.append((x, y, dxy))

        sx, sy = size[x], size[y]
        mask = active.copy()
        mask[x] = mask[y] = False
        sk = size[mask]
        total = sx + sy + sk
        D_new = ((sx + sk) * D[x, mask] + (sy + sk) * D[y, mask] - sk * dxy) / total
        D[y, mask] = D_new
        D[mask, y] = D_new
        D[x, :] = np.inf
        D[:, x] = np.inf
        size[y] = sx + sy
        active[x] = False

    # stable sort by height, then map slots to cluster ids with a union-find
    dists = np.array([m[2] for m in raw])
    order = np.argsort(dists, kind="stable")
    parent = np.arange(2 * n - 1)
    csize = np.ones(2 * n - 1, dtype=np.int64)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    merges = np.empty((n - 1, 4))
    for t, idx in enumerate(order):
        x, y, dist = raw[idx]
        rx, ry = find(x), find(y)
        new = n + t
        parent[rx] = new
        parent[ry] = new
        csize[new] = csize[rx] + csize[ry]
        merges[t] = (min(rx, ry), max(rx, ry), dist, csize[new])
    return Dendrogram(n=n, merges=merges)


def cut(dendrogram: Dendrogram, k: int) -> Partition:
    return dendrogram.cut(k)


def adjusted_rand_index(labels_a: np.ndarray, labels_b: np.ndarray) -> float:
    """Chance-corrected agreement between two flat labelings."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValueError("label vectors must have equal length")
    n = a.shape[0]
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / comb2(n)
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))
