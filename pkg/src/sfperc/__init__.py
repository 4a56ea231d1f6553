"""Monte Carlo laboratory for supercritical percolation on scale-free random trees."""

from .bp_mutations import BPConfig, StopRule, simulate_bp
from .percolation import ClusterDecomposition, decompose, p_of_n, percolate
from .stats import LimitLaw, StatReport, limit_constants
from .tree_gen import GrowthParams, TimedTree, Tree, grow_timed_tree, grow_tree

__all__ = [
    "BPConfig", "ClusterDecomposition", "GrowthParams", "LimitLaw", "StatReport",
    "StopRule", "TimedTree", "Tree", "decompose", "grow_timed_tree", "grow_tree",
    "limit_constants", "p_of_n", "percolate", "simulate_bp",
]

__version__ = "0.1.0"
