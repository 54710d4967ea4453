"""Command-line pipeline driver.

Stages communicate through well-known filenames in --out-dir, so each one
can be run, inspected, and rerun independently:

    validate   validation_report.txt, rejected_rows.csv
    dissim     dissim.bin, subject_ids.txt
    cluster    dendrogram.csv, dendrogram_tree.txt
    select-k   scores.csv, chosen_k.txt, c_index.png
    annotate   partition.csv, descriptive_*.csv, heatmap_*.csv/.png,
               cluster_sizes.png
    graph      transitions_cluster_<label>.dot/.png, transitions.json
    simulate   events.csv, subjects.csv, true_labels.csv
    pipeline   all of the above plus manifest.json

Exit codes: 0 success, 2 config error, 3 data error, 4 validation budget
exceeded, 1 anything else.  Outputs are independent of --workers.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import Cohort, ingest
from .config import AnalysisConfig, file_sha256, load_config
from .dissim import DissimilarityMatrix, pairwise_matrix
from .errors import AnalysisError, ConfigError, DataError
from .hac import Dendrogram, Partition, ward_linkage
from .select import scan_k
from .stats import annotate
from .synth import generate
from .trajgraph import build_graph, write_graphs_json


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args) -> AnalysisConfig:
    return load_config(args.config)


def _ingest(args, config: AnalysisConfig, out: Path):
    cohort, report = ingest(args.events, args.subjects, config)
    (out / "validation_report.txt").write_text(report.summary_text(), encoding="utf-8")
    report.write_rejected_csv(out / "rejected_rows.csv")
    return cohort, report


def _write_chosen_k(out: Path, k: int) -> None:
    (out / "chosen_k.txt").write_text(f"{k}\n", encoding="utf-8")


def _read_chosen_k(out: Path) -> int:
    path = out / "chosen_k.txt"
    if not path.exists():
        raise DataError(f"{path} not found; run select-k first")
    return int(path.read_text().strip())


def _write_partition(out: Path, cohort: Cohort, partition: Partition) -> None:
    with open(out / "partition.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "cluster"])
        for sid, label in zip(cohort.subject_ids, partition.labels):
            w.writerow([sid, int(label)])


def _read_partition(out: Path, cohort: Cohort) -> Partition:
    path = out / "partition.csv"
    if not path.exists():
        raise DataError(f"{path} not found; run annotate first")
    by_id: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            by_id[row["subject_id"]] = int(row["cluster"])
    ids = cohort.subject_ids
    missing = [sid for sid in ids if sid not in by_id]
    if missing:
        raise DataError(f"partition file is missing {len(missing)} subjects (first: {missing[0]!r})")
    labels = np.array([by_id[sid] for sid in ids], dtype=np.int64)
    return Partition(k=int(labels.max()), labels=labels)


def _load_dissim(out: Path) -> DissimilarityMatrix:
    path = out / "dissim.bin"
    if not path.exists():
        raise DataError(f"{path} not found; run dissim first")
    return DissimilarityMatrix.load_binary(path)


def _load_dendrogram(out: Path) -> Dendrogram:
    path = out / "dendrogram.csv"
    if not path.exists():
        raise DataError(f"{path} not found; run cluster first")
    return Dendrogram.read_csv(path)


# -- stages -------------------------------------------------------------------


def stage_validate(args, config: AnalysisConfig, out: Path, warnings: list[str]) -> Cohort:
    cohort, report = _ingest(args, config, out)
    warnings.extend(report.warnings)
    print(
        f"validate: {len(cohort)} subjects, {report.n_rejected} rejected rows "
        f"(fraction {report.rejected_fraction():.4f})"
    )
    return cohort


def stage_dissim(args, config: AnalysisConfig, out: Path, cohort: Cohort) -> DissimilarityMatrix:
    matrix = pairwise_matrix(cohort, workers=args.workers)
    matrix.save_binary(out / "dissim.bin")
    (out / "subject_ids.txt").write_text("\n".join(cohort.subject_ids) + "\n", encoding="utf-8")
    print(f"dissim: {matrix.n} subjects, {matrix.values.shape[0]} pairs -> dissim.bin")
    return matrix


def stage_cluster(config: AnalysisConfig, out: Path, matrix: DissimilarityMatrix) -> Dendrogram:
    dendrogram = ward_linkage(matrix, variant=config.thresholds.ward_variant)
    dendrogram.write_csv(out / "dendrogram.csv")
    (out / "dendrogram_tree.txt").write_text(dendrogram.to_tree_text(), encoding="utf-8")
    print(f"cluster: {dendrogram.n - 1} merges -> dendrogram.csv")
    return dendrogram


def stage_select_k(config: AnalysisConfig, out: Path, matrix: DissimilarityMatrix, dendrogram: Dendrogram) -> int:
    k_min, k_max = config.thresholds.require_k_range(matrix.n)
    scan = scan_k(matrix, k_min, k_max, dendrogram=dendrogram)
    scan.write_csv(out / "scores.csv")
    _write_chosen_k(out, scan.chosen_k)
    if config.figures:
        from .figures import save_c_index_plot

        save_c_index_plot(scan, out / "c_index.png")
    kind = "local minimum" if scan.local_minimum else "global minimum (not local)"
    print(f"select-k: chose k={scan.chosen_k} ({kind}) over [{k_min}, {k_max}]")
    return scan.chosen_k


def stage_annotate(config: AnalysisConfig, out: Path, cohort: Cohort, dendrogram: Dendrogram, k: int, warnings: list[str]) -> Partition:
    partition = dendrogram.cut(k)
    _write_partition(out, cohort, partition)
    report = annotate(cohort, partition, config)
    report.write_covariate_table(out / "descriptive_covariates.csv")
    report.write_condition_table(out / "descriptive_conditions.csv")
    report.covariate_grid.write_csv(out / "heatmap_covariates.csv")
    report.condition_grid.write_csv(out / "heatmap_conditions.csv")
    warnings.extend(report.warnings)
    if config.figures:
        from .figures import save_cluster_sizes, save_heatmap

        save_cluster_sizes(partition, out / "cluster_sizes.png")
        save_heatmap(report.covariate_grid, out / "heatmap_covariates.png", "covariates vs clusters")
        save_heatmap(report.condition_grid, out / "heatmap_conditions.png", "conditions vs clusters")
    sizes = ", ".join(str(int(s)) for s in partition.sizes())
    print(f"annotate: k={k}, cluster sizes [{sizes}]")
    return partition


def stage_graph(config: AnalysisConfig, out: Path, cohort: Cohort, partition: Partition, warnings: list[str]) -> None:
    graphs = []
    for label in range(1, partition.k + 1):
        graph = build_graph(cohort, partition, label, config.thresholds)
        graphs.append(graph)
        warnings.extend(f"cluster {label}: {w}" for w in graph.warnings)
        (out / f"transitions_cluster_{label}.dot").write_text(
            graph.to_dot(list(cohort.registry.codes)), encoding="utf-8"
        )
        if config.figures:
            from .figures import save_transition_graph

            save_transition_graph(graph, list(cohort.registry.codes), out / f"transitions_cluster_{label}.png")
    write_graphs_json(graphs, out / "transitions.json")
    total_edges = sum(len(g.edges) for g in graphs)
    print(f"graph: {partition.k} clusters, {total_edges} edges -> transitions.json")


def stage_simulate(args, config: AnalysisConfig, out: Path) -> None:
    n = int(config.simulate.get("n", 0))
    if n < 1:
        raise ConfigError("simulate.n must be set to a positive integer in the config")
    cohort, labels = generate(config, n, args.seed)
    cohort.write_events(out / "events.csv")
    cohort.write_subjects(out / "subjects.csv", [s.name for s in config.covariates])
    with open(out / "true_labels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "archetype"])
        for sid, lab in zip(cohort.subject_ids, labels):
            w.writerow([sid, int(lab)])
    print(f"simulate: n={n}, seed={args.seed} -> events.csv, subjects.csv, true_labels.csv")


# -- subcommand entry points ---------------------------------------------------


def cmd_validate(args) -> None:
    out = _out_dir(args)
    stage_validate(args, _load(args), out, [])


def cmd_dissim(args) -> None:
    config = _load(args)
    out = _out_dir(args)
    cohort = stage_validate(args, config, out, [])
    stage_dissim(args, config, out, cohort)


def cmd_cluster(args) -> None:
    config = _load(args)
    out = _out_dir(args)
    stage_cluster(config, out, _load_dissim(out))


def cmd_select_k(args) -> None:
    config = _load(args)
    out = _out_dir(args)
    stage_select_k(config, out, _load_dissim(out), _load_dendrogram(out))


def cmd_annotate(args) -> None:
    config = _load(args)
    out = _out_dir(args)
    cohort = stage_validate(args, config, out, [])
    stage_annotate(config, out, cohort, _load_dendrogram(out), _read_chosen_k(out), [])


def cmd_graph(args) -> None:
    config = _load(args)
    out = _out_dir(args)
    cohort = stage_validate(args, config, out, [])
    stage_graph(config, out, cohort, _read_partition(out, cohort), [])


def cmd_simulate(args) -> None:
    config = _load(args)
    out = _out_dir(args)
    stage_simulate(args, config, out)


def cmd_pipeline(args) -> None:
    config = _load(args)
    out = _out_dir(args)
    warnings: list[str] = []
    timings: dict[str, float] = {}

    def timed(name, fn, *a, **kw):
        t0 = time.perf_counter()
        result = fn(*a, **kw)
        timings[name] = round(time.perf_counter() - t0, 3)
        return result

    cohort = timed("validate", stage_validate, args, config, out, warnings)
    matrix = timed("dissim", stage_dissim, args, config, out, cohort)
    dendrogram = timed("cluster", stage_cluster, config, out, matrix)
    chosen_k = timed("select-k", stage_select_k, config, out, matrix, dendrogram)
    partition = timed("annotate", stage_annotate, config, out, cohort, dendrogram, chosen_k, warnings)
    timed("graph", stage_graph, config, out, cohort, partition, warnings)

    manifest = {
        "version": __version__,
        "config_sha256": file_sha256(args.config),
        "inputs": {
            "events": file_sha256(args.events),
            "subjects": file_sha256(args.subjects),
        },
        "workers": args.workers,
        "chosen_k": chosen_k,
        "stage_seconds": timings,
        "warnings": warnings,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"pipeline: done, manifest.json written (k={chosen_k})")


# -- parser --------------------------------------------------------------------


def _add_common(p, events=False, seed=False):
    p.add_argument("--config", required=True, help="YAML configuration file")
    p.add_argument("--out-dir", required=True, help="directory for stage outputs")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="parallelism cap (outputs are identical at any setting)")
    if events:
        p.add_argument("--events", required=True, help="events CSV (subject_id,condition,onset_age)")
        p.add_argument("--subjects", required=True, help="subjects CSV (subject_id,censor_age,death,covariates...)")
    if seed:
        p.add_argument("--seed", type=int, default=0, help="generator seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multistate",
        description="Censoring-aware clustering of multi-condition event histories",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    spec = [
        ("validate", cmd_validate, True, False, "check inputs against the config and error budget"),
        ("dissim", cmd_dissim, True, False, "compute the pairwise dissimilarity matrix"),
        ("cluster", cmd_cluster, False, False, "build the Ward dendrogram from dissim.bin"),
        ("select-k", cmd_select_k, False, False, "scan k by C index and pick the partition size"),
        ("annotate", cmd_annotate, True, False, "cut the dendrogram and build tables/heatmaps"),
        ("graph", cmd_graph, True, False, "build per-cluster transition graphs"),
        ("simulate", cmd_simulate, False, True, "generate a synthetic cohort from archetypes"),
        ("pipeline", cmd_pipeline, True, False, "run every stage and write a manifest"),
    ]
    for name, fn, events, seed, help_text in spec:
        p = sub.add_parser(name, help=help_text)
        _add_common(p, events=events, seed=seed)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except AnalysisError as err:
        print(f"error[{err.category}]: {err}", file=sys.stderr)
        return err.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
