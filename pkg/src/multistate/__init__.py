"""Censoring-aware clustering of multi-condition time-to-event histories.

Subjects are binary condition-by-age state matrices observed up to an
individual censoring age.  Pairs are compared with a composite Jaccard
dissimilarity restricted to the common follow-up window, clustered with
Ward agglomeration, sized with the C index, and annotated with descriptive
tables, log-odds-ratio heatmaps, and per-cluster transition graphs.
"""

__version__ = "1.0.0"

from .cohort import (
    Cohort,
    ConditionRegistry,
    EventRecord,
    FollowUp,
    StateMatrix,
    Subject,
    SubjectRecord,
    ValidationReport,
    build_follow_up,
    build_state_matrix,
    ingest,
    register_conditions,
)
from .config import AnalysisConfig, CovariateSpec, Thresholds, config_from_dict, load_config
from .dissim import (
    DissimilarityMatrix,
    PairOverlapCounts,
    composite_jaccard,
    condensed_index,
    pair_counts,
    pairwise_matrix,
    simple_sequence_jaccard,
)
from .errors import AnalysisError, BudgetError, ConfigError, DataError
from .hac import Dendrogram, Partition, adjusted_rand_index, cut, ward_linkage
from .select import CIndexScorer, PartitionScore, ScanResult, c_index, scan_k
from .stats import (
    ClusterReport,
    ContingencyTable,
    HeatmapGrid,
    LogisticFit,
    TestResult,
    annotate,
    chi_square_test,
    fisher_exact_2x2,
    fit_logistic,
    kruskal_wallis,
)
from .synth import Archetype, generate
from .trajgraph import (
    GraphEdge,
    GraphNode,
    TransitionGraph,
    build_graph,
    median_onset,
    transitive_reduction,
)

__all__ = [
    "__version__",
    "AnalysisConfig",
    "AnalysisError",
    "Archetype",
    "BudgetError",
    "CIndexScorer",
    "ClusterReport",
    "Cohort",
    "ConditionRegistry",
    "ConfigError",
    "ContingencyTable",
    "CovariateSpec",
    "DataError",
    "Dendrogram",
    "DissimilarityMatrix",
    "EventRecord",
    "FollowUp",
    "GraphEdge",
    "GraphNode",
    "HeatmapGrid",
    "LogisticFit",
    "PairOverlapCounts",
    "Partition",
    "PartitionScore",
    "ScanResult",
    "StateMatrix",
    "Subject",
    "SubjectRecord",
    "TestResult",
    "Thresholds",
    "TransitionGraph",
    "ValidationReport",
    "adjusted_rand_index",
    "annotate",
    "build_follow_up",
    "build_graph",
    "build_state_matrix",
    "c_index",
    "chi_square_test",
    "composite_jaccard",
    "condensed_index",
    "config_from_dict",
    "cut",
    "fisher_exact_2x2",
    "fit_logistic",
    "generate",
    "ingest",
    "kruskal_wallis",
    "load_config",
    "median_onset",
    "pair_counts",
    "pairwise_matrix",
    "register_conditions",
    "scan_k",
    "simple_sequence_jaccard",
    "transitive_reduction",
    "ward_linkage",
]
