"""Connectivity-aware client sampling for semi-decentralized federated learning.

Clients sit in D2D clusters whose links fail at random. Each round, clients
mix their local updates over their cluster's digraph with equal-neighbor
weights, and the server picks how many clients to hear from using cheap
degree-based bounds on the mixing matrices' top singular values.
"""

from .analysis import CostModel, TheoremBoundInputs, cumulative_cost, theorem_bound
from .federation import (
    Algorithm,
    FederationConfig,
    RoundRecord,
    run_colrel_like,
    run_connectivity_aware,
    run_fedavg,
    simulate,
)
from .objectives import build_quadratic_suite
from .spectral import BoundChoice, select_sample_size, top_two_singular_values
from .topology import TopologyConfig, assemble_network

__all__ = [
    "Algorithm",
    "BoundChoice",
    "CostModel",
    "FederationConfig",
    "RoundRecord",
    "TheoremBoundInputs",
    "TopologyConfig",
    "assemble_network",
    "build_quadratic_suite",
    "cumulative_cost",
    "run_colrel_like",
    "run_connectivity_aware",
    "run_fedavg",
    "select_sample_size",
    "simulate",
    "theorem_bound",
    "top_two_singular_values",
]
