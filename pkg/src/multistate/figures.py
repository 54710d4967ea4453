"""Report figures, rendered headlessly next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .hac import Partition
from .select import ScanResult
from .stats import HeatmapGrid
from .trajgraph import TransitionGraph, _PALETTE

# fixed PNG metadata so repeated runs stay byte-identical
_META = {"Software": "multistate"}
_DPI = 150


def save_c_index_plot(scan: ScanResult, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(scan.ks, scan.c_values, "o-", color="#1f77b4")
    ax.axvline(scan.chosen_k, color="#d62728", linestyle="--", linewidth=1)
    note = "local minimum" if scan.local_minimum else "global minimum (no interior local minimum)"
    ax.set_title(f"chosen k = {scan.chosen_k} ({note})")
    ax.set_xlabel("number of clusters k")
    ax.set_ylabel("C index")
    ax.set_xticks(scan.ks)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, metadata=_META)
    plt.close(fig)


def save_cluster_sizes(partition: Partition, path: str | Path) -> None:
    sizes = partition.sizes()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(np.arange(1, partition.k + 1), sizes, color="#1f77b4")
    ax.set_xlabel("cluster")
    ax.set_ylabel("members")
    ax.set_xticks(np.arange(1, partition.k + 1))
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, metadata=_META)
    plt.close(fig)


def save_heatmap(grid: HeatmapGrid, path: str | Path, title: str) -> None:
    n_rows = max(len(grid.rows), 1)
    n_cols = len(grid.clusters)
    values = np.ma.masked_where(grid.masked, grid.log_or)
    vmax = float(np.abs(values).max()) if values.count() else 1.0
    fig, ax = plt.subplots(figsize=(1.5 + 0.7 * n_cols, 1.2 + 0.32 * n_rows))
    cmap = plt.get_cmap("RdBu_r").copy()
    cmap.set_bad("#d9d9d9")
    im = ax.imshow(values, cmap=cmap, vmin=-vmax, vmax=vmax, aspect="auto")
    ax.set_xticks(range(n_cols), [str(c) for c in grid.clusters])
    labels = [f"{v}={lv}" if lv else v for v, lv in grid.rows]
    ax.set_yticks(range(len(grid.rows)), labels, fontsize=8)
    ax.set_xlabel("cluster")
    ax.set_title(title, fontsize=10)
    fig.colorbar(im, ax=ax, label="log odds ratio", shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, metadata=_META)
    plt.close(fig)


def save_transition_graph(graph: TransitionGraph, registry_codes: list[str], path: str | Path) -> None:
    """Nodes at (median onset age, -layer) with arrows for edges."""
    colors = {code: _PALETTE[i % len(_PALETTE)] for i, code in enumerate(registry_codes)}
    n_layers = graph.n_layers()
    fig, ax = plt.subplots(figsize=(8, 1.8 + 0.9 * max(n_layers, 1)))
    for e in graph.edges:
        src, dst = graph.node(e.source), graph.node(e.target)
        ax.annotate(
            "",
            xy=(dst.median_onset_age, -dst.layer),
            xytext=(src.median_onset_age, -src.layer),
            arrowprops=dict(arrowstyle="-|>", color="#555555", lw=1.2, shrinkA=16, shrinkB=16),
        )
    for nd in graph.nodes:
        ax.scatter(nd.median_onset_age, -nd.layer, s=500 + 2000 * nd.prevalence,
                   color=colors.get(nd.condition, _PALETTE[0]), edgecolor="#333333", zorder=3)
        ax.annotate(nd.condition, (nd.median_onset_age, -nd.layer),
                    ha="center", va="center", fontsize=8, zorder=4)
    ax.set_xlabel("median age at onset")
    ax.set_yticks([-i for i in range(n_layers)], [f"layer {i}" for i in range(n_layers)])
    ax.set_ylim(-n_layers + 0.5 if n_layers else -0.5, 0.5)
    ax.set_title(f"cluster {graph.cluster_label} (n={graph.n_members})", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, metadata=_META)
    plt.close(fig)
