"""Truly sparse multilayer perceptrons trained with sparse evolutionary training."""

from .estimator import SETMLPClassifier
from .metrics import ConfusionMatrix
from .network import Network, NetworkConfig, SparseLayer, sparse_gradient
from .sparse import COOMatrix, CSRMatrix, SparseBuilder, spmm, spmm_transpose
from .topology import TopologyParams, er_init, evolve_v1, evolve_v2, expected_nnz, prune_selection

__version__ = "0.1.0"

__all__ = [
    "SETMLPClassifier", "ConfusionMatrix", "Network", "NetworkConfig", "SparseLayer",
    "sparse_gradient", "COOMatrix", "CSRMatrix", "SparseBuilder", "spmm", "spmm_transpose",
    "TopologyParams", "er_init", "evolve_v1", "evolve_v2", "expected_nnz", "prune_selection",
]
