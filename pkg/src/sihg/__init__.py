"""Signed graph embedding with hyperbolic signed attention and a mutual information objective.

The main entry points are :func:`sihg.graph.load_edge_list`,
:func:`sihg.graph.split` and :func:`sihg.trainer.train`; the ``sihg``
console script wraps them.
"""

from .graph import SignedGraph, SplitPlan, load_edge_list, split
from .manifold import Euclidean, Hyperboloid, PoincareBall, get_manifold
from .objective import EvalReport, evaluate
from .trainer import Checkpoint, TrainConfig, TrainResult, evaluate_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "Euclidean", "EvalReport", "Hyperboloid", "PoincareBall", "SignedGraph",
    "SplitPlan", "TrainConfig", "TrainResult", "evaluate", "evaluate_checkpoint",
    "get_manifold", "load_edge_list", "split", "train",
]
