"""Interest prediction on core-periphery networks with nearest-neighbour opinion dynamics."""

from .baselines import cf_bipartite, cf_dynamic, label_propagation, random_hk
from .core import CorePartition, bgmc, budget_for, greedy_mc
from .dynamics import OpinionState, Trajectory, homophilic_index, nnim_step, run_nnim
from .graph import GraphFormatError, LabeledGraph, load_graph, load_snap_ego
from .inference import InferenceConfig, fit_pca, inference_step, initialize_beliefs, run_inference
from .knn import LshForest, exact_knn, find_neighbors, lsh_knn, resolve_k
from .metrics import DegenerateMetricError, auc_micro, evaluate, f1_micro, rmse_macro
from .pipeline import RunConfig, RunReport, export_tables, pipeline

__version__ = "0.1.0"

__all__ = [
    "CorePartition", "DegenerateMetricError", "GraphFormatError", "InferenceConfig", "LabeledGraph",
    "LshForest", "OpinionState", "RunConfig", "RunReport", "Trajectory", "auc_micro", "bgmc",
    "budget_for", "cf_bipartite", "cf_dynamic", "evaluate", "exact_knn", "export_tables", "f1_micro",
    "find_neighbors", "fit_pca", "greedy_mc", "homophilic_index", "inference_step", "initialize_beliefs",
    "label_propagation", "load_graph", "load_snap_ego", "lsh_knn", "nnim_step", "pipeline",
    "random_hk", "resolve_k", "rmse_macro", "run_inference", "run_nnim",
]
