"""Graph samples for link prediction: features, negatives and K-fold splits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from ._validation import check_pairs, check_positive_int
from .channel import Medium
from .topology import NetworkTopology, pairwise_distance

NODE_FEATURES = ("x", "y", "degree", "betweenness")
EDGE_FEATURES = ("distance_km", "qber", "key_rate_norm", "loss_db", "free_space")


@dataclass
class GraphSample:
    """Numeric view of one simulated topology.

    ``pairs`` holds every undirected link once as ``(u, v)`` with ``u < v`` and
    ``pair_features`` the matching channel features. ``edge_index`` and
    ``edge_features`` repeat each link in both directions.
    """

    node_features: np.ndarray
    pairs: np.ndarray
    pair_features: np.ndarray
    negative_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    meta: dict = field(default_factory=dict)

    @property
    def num_nodes(self):
        return len(self.node_features)

    @property
    def num_edges(self):
        return len(self.pairs)

    @property
    def positive_pairs(self):
        return self.pairs

    @property
    def edge_index(self):
        return directed_edge_index(self.pairs)

    @property
    def edge_features(self):
        return np.repeat(self.pair_features, 2, axis=0)

    @property
    def labels(self):
        return np.concatenate([np.ones(len(self.pairs), dtype=np.int64), np.zeros(len(self.negative_pairs), dtype=np.int64)])

    def features_for(self, pairs):
        """Return (features, found_mask) for undirected ``pairs``."""
        pairs = check_pairs(pairs, self.num_nodes)
        lookup = self._lookup()
        feats = np.zeros((len(pairs), self.pair_features.shape[1]))
        found = np.zeros(len(pairs), dtype=bool)
        for i, (u, v) in enumerate(pairs):
            j = lookup.get((min(u, v), max(u, v)))
            if j is not None:
                feats[i] = self.pair_features[j]
                found[i] = True
        return feats, found

    def _lookup(self):
        return {(int(u), int(v)): j for j, (u, v) in enumerate(self.pairs)}

    def to_dict(self):
        return {
            "node_feature_names": list(NODE_FEATURES),
            "edge_feature_names": list(EDGE_FEATURES),
            "node_features": self.node_features.tolist(),
            "edge_index": self.edge_index.tolist(),
            "edge_features": self.edge_features.tolist(),
            "positive_pairs": self.pairs.tolist(),
            "negative_pairs": self.negative_pairs.tolist(),
            "labels": self.labels.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data):
        pairs = np.asarray(data["positive_pairs"], dtype=np.int64).reshape(-1, 2)
        edge_features = np.asarray(data["edge_features"], dtype=np.float64).reshape(-1, len(EDGE_FEATURES))
        return cls(
            node_features=np.asarray(data["node_features"], dtype=np.float64).reshape(-1, len(NODE_FEATURES)),
            pairs=pairs,
            pair_features=edge_features[::2].copy(),
            negative_pairs=np.asarray(data["negative_pairs"], dtype=np.int64).reshape(-1, 2),
            meta=data.get("meta", {}),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")


@dataclass
class FoldSplit:
    fold_id: int
    train_positive: np.ndarray
    val_positive: np.ndarray
    train_negative: np.ndarray
    val_negative: np.ndarray

    @property
    def message_edges(self):
        return self.train_positive

    def train_pairs(self):
        return _stack(self.train_positive, self.train_negative)

    def val_pairs(self):
        return _stack(self.val_positive, self.val_negative)


def _stack(pos, neg):
    pairs = np.concatenate([pos, neg]).reshape(-1, 2)
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return pairs, labels


def directed_edge_index(pairs):
    """(2, 2m) index with both directions of every undirected pair, interleaved."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    both = np.stack([pairs, pairs[:, ::-1]], axis=1).reshape(-1, 2)
    return both.T.copy()


def build_sample(t: NetworkTopology) -> GraphSample:
    missing = [e for e in t.edges if e not in t.metrics]
    if missing:
        raise ValueError(f"{len(missing)} edges lack channel metrics; run the channel simulation first")
    n = t.num_nodes
    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_edges_from(t.edges)
    betweenness = nx.betweenness_centrality(g, normalized=True)
    node_features = np.column_stack([
        t.positions[:, 0],
        t.positions[:, 1],
        np.array([g.degree[i] for i in range(n)], dtype=np.float64),
        np.array([betweenness[i] for i in range(n)], dtype=np.float64),
    ])

    pairs = np.array(t.edges, dtype=np.int64).reshape(-1, 2)
    rows = []
    for u, v in t.edges:
        m = t.metrics[(u, v)]
        rows.append([pairwise_distance(t, u, v), m.qber, m.secure_key_rate_bps, m.loss_db,
                     1.0 if Medium(m.medium) is Medium.FREE_SPACE else 0.0])
    pair_features = np.array(rows, dtype=np.float64).reshape(-1, len(EDGE_FEATURES))
    if len(pair_features):
        rate = pair_features[:, 2]
        span = rate.max() - rate.min()
        pair_features[:, 2] = (rate - rate.min()) / span if span > 0 else 0.0
    return GraphSample(node_features=node_features, pairs=pairs, pair_features=pair_features,
                       meta={k: t.meta[k] for k in ("seed", "config", "channel") if k in t.meta})


def non_edges(num_nodes, pairs, exclusions=()):
    """All unordered non-adjacent pairs in lexicographic order, minus ``exclusions``."""
    adj = np.zeros((num_nodes, num_nodes), dtype=bool)
    for arr in (pairs, exclusions):
        arr = np.asarray(arr, dtype=np.int64).reshape(-1, 2)
        adj[arr[:, 0], arr[:, 1]] = True
        adj[arr[:, 1], arr[:, 0]] = True
    iu, iv = np.triu_indices(num_nodes, k=1)
    keep = ~adj[iu, iv]
    return np.column_stack([iu[keep], iv[keep]]).astype(np.int64)


def sample_negatives(sample, count, seed, exclusions=()):
    """Uniformly sample ``count`` distinct non-adjacent pairs."""
    count = check_positive_int(count, "count", minimum=0)
    pool = non_edges(sample.num_nodes, sample.pairs, exclusions)
    if count > len(pool):
        raise ValueError(f"requested {count} negatives but only {len(pool)} non-edges are available")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(pool), size=count, replace=False))
    return pool[idx]


def _draw_balanced(pool, count, rng):
    """``count`` pairs from ``pool``: without replacement while it lasts, then resampled."""
    if count <= len(pool):
        return pool[np.sort(rng.choice(len(pool), size=count, replace=False))]
    extra = rng.choice(len(pool), size=count - len(pool), replace=True)
    return np.concatenate([pool, pool[np.sort(extra)]])


def full_split(sample: GraphSample, seed) -> FoldSplit:
    """Every link is a training positive, with 1:1 negatives and no validation side."""
    pool = non_edges(sample.num_nodes, sample.pairs)
    if len(pool) == 0:
        raise ValueError("graph is complete: no negative pairs exist")
    empty = np.zeros((0, 2), dtype=np.int64)
    rng = np.random.default_rng(seed)
    return FoldSplit(0, sample.pairs.copy(), empty, _draw_balanced(pool, len(sample.pairs), rng), empty)


def make_folds(sample: GraphSample, k: int, seed) -> list[FoldSplit]:
    """K-fold split of the positive links with 1:1 negatives per side.

    When the graph has fewer non-edges than links (dense graphs), the non-edge
    pool is divided between training and validation in proportion to the
    positives and each side is topped up by resampling its own share, so the
    two sides stay disjoint and balanced.
    """
    k = check_positive_int(k, "k", minimum=2)
    num_pos = len(sample.pairs)
    if num_pos < k:
        raise ValueError(f"need at least {k} positive links for {k}-fold CV, got {num_pos}")
    pool = non_edges(sample.num_nodes, sample.pairs)
    if len(pool) == 0:
        raise ValueError("graph is complete: no negative pairs exist")

    rng = np.random.default_rng(seed)
    order = rng.permutation(num_pos)
    parts = np.array_split(order, k)
    folds = []
    for fold_id, val_idx in enumerate(parts):
        train_idx = np.setdiff1d(order, val_idx, assume_unique=True)
        n_val, n_train = len(val_idx), len(train_idx)
        perm = rng.permutation(len(pool))
        if len(pool) >= num_pos:
            val_neg = pool[np.sort(perm[:n_val])]
            train_neg = pool[np.sort(perm[n_val:n_val + n_train])]
        else:
            if len(pool) < 2:
                raise ValueError("need at least two non-edges to keep validation negatives disjoint")
            n_val_pool = min(len(pool) - 1, max(1, round(len(pool) * n_val / num_pos)))
            val_neg = _draw_balanced(pool[np.sort(perm[:n_val_pool])], n_val, rng)
            train_neg = _draw_balanced(pool[np.sort(perm[n_val_pool:])], n_train, rng)
        folds.append(FoldSplit(
            fold_id=fold_id,
            train_positive=sample.pairs[np.sort(train_idx)],
            val_positive=sample.pairs[np.sort(val_idx)],
            train_negative=train_neg,
            val_negative=val_neg,
        ))
    return folds


@dataclass(frozen=True)
class FeatureScaling:
    """Column standardization for node and edge features."""

    node_mean: np.ndarray
    node_scale: np.ndarray
    edge_mean: np.ndarray
    edge_scale: np.ndarray

    @staticmethod
    def _stats(x, width):
        x = np.asarray(x, dtype=np.float64).reshape(-1, width)
        if len(x) == 0:
            return np.zeros(width), np.ones(width)
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        return mean, np.where(scale > 1e-12, scale, 1.0)

    @classmethod
    def fit(cls, node_features, edge_features):
        nm, ns = cls._stats(node_features, len(NODE_FEATURES))
        em, es = cls._stats(edge_features, len(EDGE_FEATURES))
        return cls(nm, ns, em, es)

    def nodes(self, x):
        return (np.asarray(x, dtype=np.float64) - self.node_mean) / self.node_scale

    def edges(self, e):
        return (np.asarray(e, dtype=np.float64).reshape(-1, len(EDGE_FEATURES)) - self.edge_mean) / self.edge_scale

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("node_mean", "node_scale", "edge_mean", "edge_scale")}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})


def build_batch(sample: GraphSample, scaling: FeatureScaling, message_pairs, query_pairs, labels=None):
    """Model inputs where only ``message_pairs`` count as known links.

    A query pair gets its own channel features when it is one of the message
    links and the imputed mean otherwise.
    """
    from .model import Batch

    message_pairs = check_pairs(message_pairs, sample.num_nodes, "message_pairs")
    query_pairs = check_pairs(query_pairs, sample.num_nodes, "query_pairs")
    msg_feats, found = sample.features_for(message_pairs)
    if not found.all():
        raise ValueError("message_pairs must be links of the sample")
    known = {(min(u, v), max(u, v)) for u, v in message_pairs.tolist()}
    has_edge = np.array([(min(u, v), max(u, v)) in known for u, v in query_pairs.tolist()], dtype=bool)
    query_feats, _ = sample.features_for(query_pairs)
    return Batch(
        node_features=scaling.nodes(sample.node_features),
        message_pairs=message_pairs,
        message_features=scaling.edges(msg_feats),
        query_pairs=query_pairs,
        query_features=scaling.edges(query_feats),
        query_has_edge=has_edge,
        labels=None if labels is None else np.asarray(labels, dtype=np.float64),
    )
