"""Simulated QKD networks, BB84 link metrics and graph-attention link prediction."""

from .analyzer import NetworkReport, algebraic_connectivity, analyze, attack_simulation
from .channel import ChannelMetrics, ChannelParams, Medium, simulate_bb84, simulate_network
from .dataset import FoldSplit, GraphSample, build_sample, make_folds
from .estimator import ChannelSimulator, QKDLinkPredictor
from .evaluation import MetricReport, auc, average_precision
from .experiments import ExperimentConfig, ExperimentReport, load_config, run_sweep
from .model import ModelConfig, ModelParams, init_params
from .optimizer import ComparisonReport, OptimizationConfig, compare, optimize_topology
from .topology import NetworkTopology, TopologyConfig, generate_topology, pairwise_distance
from .training import CVResult, TrainConfig, cross_validate, train_fold

__version__ = "0.1.0"

__all__ = [
    "CVResult", "ChannelMetrics", "ChannelParams", "ChannelSimulator", "ComparisonReport",
    "ExperimentConfig", "ExperimentReport", "FoldSplit", "GraphSample", "Medium", "MetricReport",
    "ModelConfig", "ModelParams", "NetworkReport", "NetworkTopology", "OptimizationConfig",
    "QKDLinkPredictor", "TopologyConfig", "TrainConfig", "algebraic_connectivity", "analyze",
    "attack_simulation", "auc", "average_precision", "build_sample", "compare", "cross_validate",
    "generate_topology", "init_params", "load_config", "make_folds", "optimize_topology",
    "pairwise_distance", "run_sweep", "simulate_bb84", "simulate_network", "train_fold",
]
