"""Weakly supervised 3D instance segmentation: clustering, objectness, AOIA and metrics."""
from .aoia import AoiaParams, aoia_infer
from .cluster import BfsParams, SelectionBand, bfs_cluster, brute_force_components, select_optimal_samples
from .evaluation import EvalReport, evaluate
from .objectness import RecomposeParams, objectness_labels, recompose_scene
from .pcio import CategoryConfig, Clustering, LabeledCloud, SignalSet, default_config
from .signals import NoiseModel, oracle_signals, perturb

__all__ = [
    "AoiaParams", "aoia_infer",
    "BfsParams", "SelectionBand", "bfs_cluster", "brute_force_components", "select_optimal_samples",
    "EvalReport", "evaluate",
    "RecomposeParams", "objectness_labels", "recompose_scene",
    "CategoryConfig", "Clustering", "LabeledCloud", "SignalSet", "default_config",
    "NoiseModel", "oracle_signals", "perturb",
]
__version__ = "0.1.0"
