"""Per-cluster transition graphs.

Nodes are the cluster's frequent conditions placed at their median onset
age; a directed edge a->b states that among members with both conditions,
onset of a precedes onset of b significantly more often than chance (one
sided exact binomial sign test, ties dropped from the trial count).
Layers come from longest-path layering, so every edge points from a lower
to a strictly higher layer.  Graphs for different clusters are independent
and may be built in parallel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from .cohort import Cohort
from .config import Thresholds
from .hac import Partition
from .special import binom_sf_geq

# stable fill palette, keyed by condition position in the registry
_PALETTE = (
    "#8dd3c7", "#ffffb3", "#bebada", "#fb8072", "#80b1d3", "#fdb462",
    "#b3de69", "#fccde5", "#d9d9d9", "#bc80bd", "#ccebc5", "#ffed6f",
)


@dataclass(frozen=True)
class GraphNode:
    condition: str
    median_onset_age: int
    prevalence: float
    layer: int


@dataclass(frozen=True)
class GraphEdge:
    source: str
    target: str
    support: int  # members having both conditions
    forward_fraction: float  # among untied members
    p_value: float


@dataclass(frozen=True)
class TransitionGraph:
    cluster_label: int
    n_members: int
    nodes: tuple[GraphNode, ...]
    edges: tuple[GraphEdge, ...]
    warnings: tuple[str, ...] = ()

    def node(self, condition: str) -> GraphNode:
        for nd in self.nodes:
            if nd.condition == condition:
                return nd
        raise KeyError(condition)

    def n_layers(self) -> int:
        return 1 + max((nd.layer for nd in self.nodes), default=-1)

    def successors(self, condition: str) -> list[str]:
        return [e.target for e in self.edges if e.source == condition]

    def reachable(self, condition: str) -> set[str]:
        seen: set[str] = set()
        stack = [condition]
        while stack:
            for nxt in self.successors(stack.pop()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    # -- export ---------------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "cluster": self.cluster_label,
            "n_members": self.n_members,
            "nodes": [
                {
                    "condition": nd.condition,
                    "median_onset_age": nd.median_onset_age,
                    "prevalence": nd.prevalence,
                    "layer": nd.layer,
                }
                for nd in self.nodes
            ],
            "edges": [
                {
                    "source": e.source,
                    "target": e.target,
                    "support": e.support,
                    "forward_fraction": e.forward_fraction,
                    "p_value": e.p_value,
                }
                for e in self.edges
            ],
            "warnings": list(self.warnings),
        }

    def to_dot(self, registry_codes: list[str] | None = None) -> str:
        """DOT text with pre-seeded positions (median onset, -layer)."""
        colors = {}
        codes = registry_codes if registry_codes is not None else [nd.condition for nd in self.nodes]
        for i, code in enumerate(codes):
            colors[code] = _PALETTE[i % len(_PALETTE)]
        lines = [
            f"digraph cluster_{self.cluster_label} {{",
            "  node [shape=ellipse, style=filled, fontname=\"Helvetica\"];",
        ]
        for nd in self.nodes:
            color = colors.get(nd.condition, _PALETTE[0])
            lines.append(
                f'  "{nd.condition}" [label="{nd.condition}", pos="{nd.median_onset_age},{-nd.layer}!", '
                f'fillcolor="{color}"];'
            )
        for e in self.edges:
            lines.append(f'  "{e.source}" -> "{e.target}" [label="{e.forward_fraction:.2f}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def median_onset(onsets: list[int]) -> int:
    """Lower median, keeping ages on the integer grid."""
    if not onsets:
        raise ValueError("no onsets")
    ordered = sorted(onsets)
    return ordered[(len(ordered) - 1) // 2]


def _longest_path_layers(nodes: list[str], edges: list[GraphEdge]) -> dict[str, int]:
    in_deg = {v: 0 for v in nodes}
    for e in edges:
        in_deg[e.target] += 1
    layer = {v: 0 for v in nodes}
    queue = [v for v in nodes if in_deg[v] == 0]
    seen = 0
    succs: dict[str, list[str]] = {v: [] for v in nodes}
    for e in edges:
        succs[e.source].append(e.target)
    while queue:
        v = queue.pop(0)
        seen += 1
        for w in succs[v]:
            layer[w] = max(layer[w], layer[v] + 1)
            in_deg[w] -= 1
            if in_deg[w] == 0:
                queue.append(w)
    if seen != len(nodes):
        raise RuntimeError("cycle survived edge pruning")
    return layer


def _break_cycles(nodes: list[str], edges: list[GraphEdge], warnings: list[str]) -> list[GraphEdge]:
    """Drop the weakest edge of any directed cycle until the graph is a DAG.

    Dominance from pairwise sign tests is not automatically transitive, so
    cycles are possible in principle.  Weakest = largest p, then smallest
    forward fraction, then lexicographic."""
    edges = list(edges)
    while True:
        succs: dict[str, list[str]] = {v: [] for v in nodes}
        for e in edges:
            succs[e.source].append(e.target)

        color = {v: 0 for v in nodes}  # 0 new, 1 on stack, 2 done
        cycle: list[str] | None = None

        def dfs(v: str, path: list[str]) -> list[str] | None:
            color[v] = 1
            path.append(v)
            for w in succs[v]:
                if color[w] == 1:
                    return path[path.index(w) :] + [w]
                if color[w] == 0:
                    found = dfs(w, path)
                    if found:
                        return found
            color[v] = 2
            path.pop()
            return None

        for v in nodes:
            if color[v] == 0:
                cycle = dfs(v, [])
                if cycle:
                    break
        if not cycle:
            return edges
        on_cycle = {(cycle[i], cycle[i + 1]) for i in range(len(cycle) - 1)}
        victim = max(
            (e for e in edges if (e.source, e.target) in on_cycle),
            key=lambda e: (e.p_value, -e.forward_fraction, e.source, e.target),
        )
        edges.remove(victim)
        warnings.append(f"cycle broken by dropping edge {victim.source}->{victim.target} (p={victim.p_value:.4g})")


def build_graph(
    cohort: Cohort,
    partition: Partition,
    cluster_label: int,
    thresholds: Thresholds | None = None,
) -> TransitionGraph:
    """Transition graph for one cluster.

    Nodes: conditions with prevalence >= node_prevalence_min among members.
    Edge a->b: among members with both (support >= edge_support_min), the
    untied forward fraction exceeds 0.5 with one-sided exact binomial
    p < edge_alpha.
    """
    thresholds = thresholds if thresholds is not None else Thresholds()
    if not 1 <= cluster_label <= partition.k:
        raise ValueError(f"unknown cluster {cluster_label}; partition has 1..{partition.k}")
    members = partition.members(cluster_label)
    m = members.shape[0]
    onset_maps = [cohort.subjects[i].onsets for i in members]

    warnings: list[str] = []
    nodes_raw: list[tuple[str, int, float]] = []
    for code in cohort.registry.codes:
        ages = [om[code] for om in onset_maps if code in om]
        if not ages:
            continue
        prevalence = len(ages) / m
        if prevalence >= thresholds.node_prevalence_min:
            nodes_raw.append((code, median_onset(ages), prevalence))
    node_codes = [code for code, _, _ in nodes_raw]

    edges: list[GraphEdge] = []
    for i in range(len(node_codes)):
        for j in range(i + 1, len(node_codes)):
            a, b = node_codes[i], node_codes[j]
            fwd = rev = both = 0
            for om in onset_maps:
                if a in om and b in om:
                    both += 1
                    if om[a] < om[b]:
                        fwd += 1
                    elif om[b] < om[a]:
                        rev += 1
            trials = fwd + rev
            if both < thresholds.edge_support_min or trials == 0:
                continue
            if fwd > rev:
                p = binom_sf_geq(fwd, trials)
                if p < thresholds.edge_alpha:
                    edges.append(GraphEdge(a, b, both, fwd / trials, p))
            elif rev > fwd:
                p = binom_sf_geq(rev, trials)
                if p < thresholds.edge_alpha:
                    edges.append(GraphEdge(b, a, both, rev / trials, p))

    edges = _break_cycles(node_codes, edges, warnings)
    layer = _longest_path_layers(node_codes, edges)
    nodes = tuple(
        GraphNode(code, med, prev, layer[code]) for code, med, prev in nodes_raw
    )
    return TransitionGraph(
        cluster_label=cluster_label,
        n_members=m,
        nodes=nodes,
        edges=tuple(edges),
        warnings=tuple(warnings),
    )


def transitive_reduction(graph: TransitionGraph) -> TransitionGraph:
    """Drop every edge implied by a longer path; reachability is unchanged,
    and so are the longest-path layers."""
    succs: dict[str, set[str]] = {nd.condition: set() for nd in graph.nodes}
    for e in graph.edges:
        succs[e.source].add(e.target)

    def reachable_without(src: str, skip_target: str) -> set[str]:
        seen: set[str] = set()
        stack = [w for w in succs[src] if w != skip_target]
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            stack.extend(succs[v])
        return seen

    kept = tuple(e for e in graph.edges if e.target not in reachable_without(e.source, e.target))
    return replace(graph, edges=kept)


def write_graphs_json(graphs: list[TransitionGraph], path: str | Path) -> None:
    payload = {"clusters": [g.to_json_dict() for g in graphs]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
