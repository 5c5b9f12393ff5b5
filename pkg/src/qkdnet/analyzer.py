"""Structural, spectral and resilience analysis of QKD topologies."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import networkx as nx
import numpy as np

from ._validation import check_real
from .topology import NetworkTopology, pairwise_distance

# NetworkReport field -> Table 1 row label
TABLE1_COLUMNS = {
    "num_edges": "Num. Edges",
    "avg_degree": "Avg. Degree",
    "avg_key_rate_bps": "Key Rate (bits/s)",
    "avg_qber": "Avg. QBER",
    "max_distance_km": "Max. Dist. (km)",
    "edge_connectivity": "Edge Conn.",
    "node_connectivity": "Node Conn.",
    "algebraic_connectivity": "Alg. Conn.",
}

ATTACK_STRATEGIES = ("random", "degree_targeted", "betweenness_targeted", "link_targeted")


@dataclass(frozen=True)
class NetworkReport:
    num_nodes: int
    num_edges: int
    avg_degree: float
    avg_key_rate_bps: float
    avg_qber: float
    max_distance_km: float
    avg_distance_km: float
    edge_connectivity: int
    node_connectivity: int
    algebraic_connectivity: float
    avg_clustering: float
    avg_path_length: float
    total_key_rate_bps: float
    avg_dark_click_fraction: float

    def to_dict(self):
        return asdict(self)

    def table1_row(self):
        return {label: getattr(self, name) for name, label in TABLE1_COLUMNS.items()}

    def save(self, path, meta=None):
        payload = {"meta": meta or {}, "report": self.to_dict(), "table1": self.table1_row()}
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def laplacian_spectrum(g: nx.Graph) -> np.ndarray:
    """Ascending eigenvalues of the combinatorial Laplacian ``D - A``."""
    n = g.number_of_nodes()
    if n == 0:
        return np.zeros(0)
    A = nx.to_numpy_array(g, nodelist=sorted(g.nodes), weight=None)
    L = np.diag(A.sum(axis=1)) - A
    return np.linalg.eigvalsh(L)


def algebraic_connectivity(g: nx.Graph) -> float:
    if g.number_of_nodes() < 2 or not nx.is_connected(g):
        return 0.0
    return float(max(0.0, laplacian_spectrum(g)[1]))


def _mean(values):
    values = list(values)
    return float(np.mean(values)) if values else 0.0


def analyze(t: NetworkTopology) -> NetworkReport:
    if t.num_nodes == 0:
        raise ValueError("cannot analyze an empty graph")
    g = t.to_networkx()
    n = t.num_nodes
    metrics = [t.metrics[e] for e in t.edges if e in t.metrics]
    distances = [pairwise_distance(t, u, v) for u, v in t.edges]

    connected = n > 1 and nx.is_connected(g)
    if n == 1:
        node_conn = edge_conn = 0
    elif not connected:
        node_conn = edge_conn = 0
    else:
        edge_conn = nx.edge_connectivity(g)
        node_conn = nx.node_connectivity(g)

    if n > 1 and t.num_edges:
        largest = g.subgraph(max(nx.connected_components(g), key=len))
        path_len = nx.average_shortest_path_length(largest) if largest.number_of_nodes() > 1 else 0.0
    else:
        path_len = 0.0

    return NetworkReport(
        num_nodes=n,
        num_edges=t.num_edges,
        avg_degree=2.0 * t.num_edges / n,
        avg_key_rate_bps=_mean(m.secure_key_rate_bps for m in metrics),
        avg_qber=_mean(m.qber for m in metrics),
        max_distance_km=max(distances, default=0.0),
        avg_distance_km=_mean(distances),
        edge_connectivity=int(edge_conn),
        node_connectivity=int(node_conn),
        algebraic_connectivity=algebraic_connectivity(g),
        avg_clustering=float(nx.average_clustering(g)),
        avg_path_length=float(path_len),
        total_key_rate_bps=float(sum(m.secure_key_rate_bps for m in metrics)),
        avg_dark_click_fraction=_mean(m.dark_click_fraction for m in metrics),
    )


@dataclass(frozen=True)
class ResiliencePoint:
    removed: int
    largest_component_fraction: float
    total_key_rate_bps: float


def _largest_fraction(g, n_original):
    if g.number_of_nodes() == 0:
        return 0.0
    return max(len(c) for c in nx.connected_components(g)) / n_original


def _total_rate(g):
    return float(sum(d.get("key_rate_bps", 0.0) for _, _, d in g.edges(data=True)))


def _argmax_by(scores):
    # highest score, ties broken by smallest id
    return min(scores, key=lambda k: (-scores[k], k))


def attack_simulation(t: NetworkTopology, strategy, removal_fraction, seed=0):
    """Remove nodes (or links) one at a time and record the damage after each step.

    The curve starts with the intact network. Targeted strategies recompute
    their centrality after every removal.
    """
    if strategy not in ATTACK_STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {ATTACK_STRATEGIES}")
    removal_fraction = check_real(removal_fraction, "removal_fraction", low=0, high=1, high_inclusive=False)
    g = t.to_networkx()
    n = t.num_nodes
    rng = np.random.default_rng(seed)

    curve = [ResiliencePoint(0, _largest_fraction(g, n), _total_rate(g))]
    if strategy == "link_targeted":
        steps = math.floor(removal_fraction * g.number_of_edges())
        for i in range(1, steps + 1):
            eb = nx.edge_betweenness_centrality(g)
            g.remove_edge(*_argmax_by({tuple(sorted(e)): s for e, s in eb.items()}))
            curve.append(ResiliencePoint(i, _largest_fraction(g, n), _total_rate(g)))
        return curve

    steps = math.floor(removal_fraction * n)
    order = rng.permutation(n).tolist() if strategy == "random" else None
    for i in range(1, steps + 1):
        if strategy == "random":
            node = order[i - 1]
        elif strategy == "degree_targeted":
            node = _argmax_by(dict(g.degree))
        else:
            node = _argmax_by(nx.betweenness_centrality(g))
        g.remove_node(node)
        curve.append(ResiliencePoint(i, _largest_fraction(g, n), _total_rate(g)))
    return curve
