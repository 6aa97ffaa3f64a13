"""History-driven target MCMC for graph sampling."""

from .engine import ConfigError, ExperimentConfig, run_budget, run_chain, run_replicated
from .graph import Graph, GraphFormatError, largest_connected_component, load_edge_list, read_edge_list
from .target import HistoryTarget, LruVisitStore, PlainTarget, TargetWeights, VisitStore

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "Graph",
    "GraphFormatError",
    "HistoryTarget",
    "LruVisitStore",
    "PlainTarget",
    "TargetWeights",
    "VisitStore",
    "largest_connected_component",
    "load_edge_list",
    "read_edge_list",
    "run_budget",
    "run_chain",
    "run_replicated",
]
