"""Curriculum-guided three-stage attention GNN for imbalanced node
classification: graph ingestion, imbalance generation, hybrid
aggregation layers, Engage/Enact/Embed attention, adaptive curriculum
loss, training, evaluation, and experiment orchestration.
"""

from .graph import (ClassStats, Graph, ImbalanceSpec, SplitAssignment,
                    apply_imbalance, build_graph, class_stats,
                    heterophily_ratio, make_split)
from .losses import CurriculumConfig, LossBreakdown, phase_weights
from .metrics import Metrics, compute_metrics, evaluate, stability_report
from .model import ABLATIONS, VARIANTS, Model
from .runs import RunConfig, run, run_ablation, run_sweep, export_embeddings
from .synthetic import SyntheticSpec, generate_sbm
from .training import DivergenceError, TrainConfig, TrainHistory, train

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS", "VARIANTS", "ClassStats", "CurriculumConfig",
    "DivergenceError", "Graph", "ImbalanceSpec", "LossBreakdown", "Metrics",
    "Model", "RunConfig", "SplitAssignment", "SyntheticSpec", "TrainConfig",
    "TrainHistory", "apply_imbalance", "build_graph", "class_stats",
    "compute_metrics", "evaluate", "export_embeddings", "generate_sbm",
    "heterophily_ratio", "make_split", "phase_weights", "run", "run_ablation",
    "run_sweep", "stability_report", "train",
]
