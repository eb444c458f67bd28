"""Multiple-tests similarity and B-Attention graph structure learning on numpy."""

from .attention import (
    AttentionMap,
    AttentionParams,
    Subgraph,
    a_x,
    b_attention_layer,
    fuse,
    plain_gcn_layer,
    q_attention,
    sample_subgraph,
    self_attention,
)
from .clustering import ScoredEdgeList, UnionFind, g_cut, knn_edges, threshold_sweep
from .errors import (
    BattentionError,
    InfeasibleBoundError,
    NumericError,
    ParameterError,
    UndefinedENRError,
    UndefinedSimilarityError,
    ValidationError,
)
from .graph import FeatureMatrix, KnnGraph, LabelVector, avg_enr, build_knn_graph, enr, l2_normalize, sim_s
from .metrics import auc, bcubed_f, mean_average_precision, pairwise_f, roc_points
from .multitest import (
    SimMScore,
    SimulationReport,
    TestModel,
    chernoff_tail_bound,
    min_m_binary,
    min_m_real,
    sim_m,
    simulate,
    single_test_expectations,
    threshold_s_t,
)
from .synthetic import gen_synthetic
from .training import Network, PairBatch, TrainConfig, backward, enhance, hinge_pair_loss, sgd_step, train

__version__ = "0.1.0"

__all__ = [
    "AttentionMap",
    "AttentionParams",
    "BattentionError",
    "FeatureMatrix",
    "InfeasibleBoundError",
    "KnnGraph",
    "LabelVector",
    "Network",
    "NumericError",
    "PairBatch",
    "ParameterError",
    "ScoredEdgeList",
    "SimMScore",
    "SimulationReport",
    "Subgraph",
    "TestModel",
    "TrainConfig",
    "UndefinedENRError",
    "UndefinedSimilarityError",
    "UnionFind",
    "ValidationError",
    "a_x",
    "auc",
    "avg_enr",
    "b_attention_layer",
    "backward",
    "bcubed_f",
    "build_knn_graph",
    "chernoff_tail_bound",
    "enhance",
    "enr",
    "fuse",
    "g_cut",
    "gen_synthetic",
    "hinge_pair_loss",
    "knn_edges",
    "l2_normalize",
    "mean_average_precision",
    "min_m_binary",
    "min_m_real",
    "pairwise_f",
    "plain_gcn_layer",
    "q_attention",
    "roc_points",
    "sample_subgraph",
    "self_attention",
    "sgd_step",
    "sim_m",
    "sim_s",
    "simulate",
    "single_test_expectations",
    "threshold_s_t",
    "threshold_sweep",
    "train",
]
