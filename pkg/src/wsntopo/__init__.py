"""Sensor-network topology search with MCTS and a policy/value network."""
from .baselines import brute_force_optimal, mst_topology, random_topology, star_topology
from .estimator import TopologyOptimizer
from .harness import generate_instance
from .network import (
    NetworkSpec,
    Topology,
    lifetime_deterministic,
    lifetime_stochastic,
    load_instance,
    save_instance,
    validate_topology,
)
from .trainer import NetworkChange, TrainConfig, Trainer

__all__ = [
    "NetworkChange", "NetworkSpec", "Topology", "TopologyOptimizer", "TrainConfig", "Trainer",
    "brute_force_optimal", "generate_instance", "lifetime_deterministic", "lifetime_stochastic",
    "load_instance", "mst_topology", "random_topology", "save_instance", "star_topology",
    "validate_topology",
]
