"""Clustered random geometric topologies for QKD networks.

Nodes are placed by a two-level Gaussian model: cluster centers are drawn
around the origin and every node is drawn around the center of the cluster it
is assigned to (round-robin). The covariances are given in a layout frame that
``coordinate_scale`` stretches into the units of the link threshold. Any two
nodes closer than the distance threshold are linked.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ._validation import check_positive_int, check_real

FORMAT_VERSION = 1


@dataclass(frozen=True)
class TopologyConfig:
    num_nodes: int = 20
    num_clusters: int = 2
    center_covariance: float = 100.0
    node_covariance: float = 10.0
    coordinate_scale: float = 10.0
    max_link_distance_units: float = 100.0
    unit_to_km: float = 0.125
    seed: int = 0

    def __post_init__(self):
        check_positive_int(self.num_nodes, "num_nodes")
        check_positive_int(self.num_clusters, "num_clusters")
        check_real(self.center_covariance, "center_covariance", low=0, low_inclusive=False)
        check_real(self.node_covariance, "node_covariance", low=0, low_inclusive=False)
        check_real(self.coordinate_scale, "coordinate_scale", low=0, low_inclusive=False)
        check_real(self.max_link_distance_units, "max_link_distance_units", low=0, low_inclusive=False)
        check_real(self.unit_to_km, "unit_to_km", low=0, low_inclusive=False)
        check_positive_int(self.seed, "seed", minimum=0)
        if self.seed >= 2**64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def clusters(self):
        return min(self.num_clusters, self.num_nodes)

    @property
    def max_link_distance_km(self):
        return self.max_link_distance_units * self.unit_to_km


@dataclass
class NetworkTopology:
    """Node positions (abstract units) plus undirected links.

    ``edges`` holds ``(u, v)`` with ``u < v`` in lexicographic order.
    ``metrics`` maps an edge to its :class:`~qkdnet.channel.ChannelMetrics`
    once a channel simulation has been attached.
    """

    positions: np.ndarray
    edges: list
    unit_to_km: float = 0.125
    max_link_distance_km: float = math.inf
    meta: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        self.edges = sorted((min(u, v), max(u, v)) for u, v in self.edges)
        n = self.num_nodes
        seen = set()
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise IndexError(f"edge ({u}, {v}) references an unknown node")
            if (u, v) in seen:
                raise ValueError(f"duplicate edge ({u}, {v})")
            seen.add((u, v))

    @property
    def num_nodes(self):
        return len(self.positions)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def avg_degree(self):
        return 2.0 * self.num_edges / self.num_nodes

    @property
    def distances(self):
        return {e: pairwise_distance(self, *e) for e in self.edges}

    def has_edge(self, u, v):
        return (min(u, v), max(u, v)) in self._edge_set()

    def _edge_set(self):
        return set(self.edges)

    def with_edges(self, edges, metrics=None):
        return replace(self, edges=list(edges), metrics=dict(metrics or {}), meta=dict(self.meta))

    def to_networkx(self):
        import networkx as nx

        g = nx.Graph()
        g.add_nodes_from(range(self.num_nodes))
        for u, v in self.edges:
            m = self.metrics.get((u, v))
            attrs = {"distance_km": pairwise_distance(self, u, v)}
            if m is not None:
                attrs["key_rate_bps"] = m.secure_key_rate_bps
            g.add_edge(u, v, **attrs)
        return g

    # -- serialization -----------------------------------------------------

    def to_dict(self):
        edges = []
        for u, v in self.edges:
            rec = {"u": int(u), "v": int(v), "distance_km": pairwise_distance(self, u, v)}
            m = self.metrics.get((u, v))
            if m is not None:
                rec.update(m.edge_record())
            edges.append(rec)
        return {
            "meta": {
                "format_version": FORMAT_VERSION,
                "unit_to_km": self.unit_to_km,
                "max_link_distance_km": None if math.isinf(self.max_link_distance_km) else self.max_link_distance_km,
                **self.meta,
            },
            "nodes": [{"id": i, "x": float(x), "y": float(y)} for i, (x, y) in enumerate(self.positions)],
            "edges": edges,
        }

    @classmethod
    def from_dict(cls, data):
        from .channel import ChannelMetrics

        meta = dict(data.get("meta", {}))
        meta.pop("format_version", None)
        unit_to_km = float(meta.pop("unit_to_km", 0.125))
        cap = meta.pop("max_link_distance_km", None)
        nodes = sorted(data["nodes"], key=lambda rec: rec["id"])
        if [rec["id"] for rec in nodes] != list(range(len(nodes))):
            raise ValueError("node ids must be contiguous from 0")
        positions = np.array([[rec["x"], rec["y"]] for rec in nodes], dtype=np.float64).reshape(-1, 2)
        edges, metrics = [], {}
        for rec in data.get("edges", []):
            u, v = int(rec["u"]), int(rec["v"])
            key = (min(u, v), max(u, v))
            edges.append(key)
            if "qber" in rec:
                metrics[key] = ChannelMetrics.from_edge_record(rec)
        return cls(
            positions=positions,
            edges=edges,
            unit_to_km=unit_to_km,
            max_link_distance_km=math.inf if cap is None else float(cap),
            meta=meta,
            metrics=metrics,
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate_topology(cfg: TopologyConfig) -> NetworkTopology:
    rng = np.random.default_rng(cfg.seed)
    k = cfg.clusters
    centers = rng.normal(0.0, math.sqrt(cfg.center_covariance), size=(k, 2))
    assignment = np.arange(cfg.num_nodes) % k
    offsets = rng.normal(0.0, math.sqrt(cfg.node_covariance), size=(cfg.num_nodes, 2))
    positions = cfg.coordinate_scale * (centers[assignment] + offsets)

    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    iu, iv = np.triu_indices(cfg.num_nodes, k=1)
    mask = dist[iu, iv] <= cfg.max_link_distance_units
    edges = list(zip(iu[mask].tolist(), iv[mask].tolist()))
    return NetworkTopology(
        positions=positions,
        edges=edges,
        unit_to_km=cfg.unit_to_km,
        max_link_distance_km=cfg.max_link_distance_km,
        meta={"seed": cfg.seed, "config": asdict(cfg), "clusters": k},
    )


def pairwise_distance(t: NetworkTopology, u: int, v: int) -> float:
    """Euclidean distance between two nodes in km."""
    n = t.num_nodes
    for node in (u, v):
        if not (0 <= node < n):
            raise KeyError(f"unknown node id {node}")
    if u == v:
        return 0.0
    dx, dy = t.positions[u] - t.positions[v]
    return float(np.hypot(dx, dy) * t.unit_to_km)


def pairwise_distance_matrix(t: NetworkTopology) -> np.ndarray:
    diff = t.positions[:, None, :] - t.positions[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1]) * t.unit_to_km
