import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdnet.channel import ChannelParams, simulate_network
from qkdnet.dataset import (
    EDGE_FEATURES,
    NODE_FEATURES,
    FeatureScaling,
    GraphSample,
    build_batch,
    build_sample,
    full_split,
    make_folds,
    non_edges,
    sample_negatives,
)

from conftest import make_topology


def simulated(positions, edges, seed=0):
    return simulate_network(make_topology(positions, edges), ChannelParams(), seed)


def brute_force_betweenness(n, edges):
    """Normalized betweenness by enumerating every simple path between each pair."""
    adj = {i: set() for i in range(n)}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)

    def simple_paths(s, t):
        stack = [(s, [s])]
        while stack:
            node, path = stack.pop()
            if node == t:
                yield path
                continue
            for nb in adj[node]:
                if nb not in path:
                    stack.append((nb, path + [nb]))

    score = np.zeros(n)
    for s, t in itertools.combinations(range(n), 2):
        paths = list(simple_paths(s, t))
        if not paths:
            continue
        best = min(len(p) for p in paths)
        shortest = [p for p in paths if len(p) == best]
        for p in shortest:
            for node in p[1:-1]:
                score[node] += 1.0 / len(shortest)
    if n > 2:
        score /= (n - 1) * (n - 2) / 2
    return score


def test_path_graph_features():
    s = build_sample(simulated([(0, 0), (50, 0), (100, 0)], [(0, 1), (1, 2)]))
    assert s.node_features.shape == (3, len(NODE_FEATURES))
    assert s.node_features[:, 2].tolist() == [1, 2, 1]
    assert s.node_features[:, 3].tolist() == pytest.approx([0, 1, 0])
    assert s.node_features[:, :2].tolist() == [[0, 0], [50, 0], [100, 0]]


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 7).flatmap(
    lambda n: st.tuples(st.just(n), st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))))))
def test_betweenness_matches_path_enumeration(data):
    n, raw = data
    edges = sorted({(min(u, v), max(u, v)) for u, v in raw if u != v})
    positions = [(10.0 * i, 3.0 * (i % 2)) for i in range(n)]
    s = build_sample(simulated(positions, edges))
    assert s.node_features[:, 3] == pytest.approx(brute_force_betweenness(n, edges), abs=1e-12)
    degrees = np.bincount(np.array(edges, dtype=int).ravel(), minlength=n) if edges else np.zeros(n)
    assert s.node_features[:, 2].tolist() == degrees.tolist()


def test_single_node_sample():
    s = build_sample(simulated([(0, 0)], []))
    assert s.node_features.shape == (1, 4)
    assert s.node_features[0, 2] == 0 and s.node_features[0, 3] == 0
    assert s.num_edges == 0 and s.edge_index.shape == (2, 0)


def test_edge_index_doubles_links(sample20, sim20):
    assert sample20.edge_index.shape == (2, 2 * sim20.num_edges)
    assert sample20.edge_features.shape == (2 * sim20.num_edges, len(EDGE_FEATURES))
    ei = sample20.edge_index
    directed = set(zip(ei[0].tolist(), ei[1].tolist()))
    for u, v in sim20.edges:
        assert (u, v) in directed and (v, u) in directed


def test_edge_features_follow_metrics(sample20, sim20):
    rates = np.array([sim20.metrics[e].secure_key_rate_bps for e in sim20.edges])
    expected = (rates - rates.min()) / (rates.max() - rates.min())
    assert sample20.pair_features[:, 2] == pytest.approx(expected)
    for j, e in enumerate(sim20.edges):
        m = sim20.metrics[e]
        assert sample20.pair_features[j, 0] == pytest.approx(m.distance_km)
        assert sample20.pair_features[j, 1] == m.qber
        assert sample20.pair_features[j, 3] == m.loss_db
        assert sample20.pair_features[j, 4] == float(m.medium.value == "free_space")


def test_labels_match_topology(sample20, sim20):
    negs = sample_negatives(sample20, 10, seed=1)
    s = GraphSample(sample20.node_features, sample20.pairs, sample20.pair_features, negs)
    edges = set(sim20.edges)
    pairs = np.concatenate([s.pairs, s.negative_pairs])
    for (u, v), y in zip(pairs.tolist(), s.labels.tolist()):
        assert y == int((min(u, v), max(u, v)) in edges)


def k10_minus(removed):
    pos = [(np.cos(a) * 10, np.sin(a) * 10) for a in np.linspace(0, 2 * np.pi, 10, endpoint=False)]
    edges = [e for e in itertools.combinations(range(10), 2) if e not in removed]
    return build_sample(simulated(pos, edges))


def test_negatives_exhaust_small_pool():
    removed = [(0, 5), (1, 6), (2, 7), (3, 8), (4, 9), (0, 2)]
    s = k10_minus(removed)
    assert s.num_edges == 39 and len(non_edges(10, s.pairs)) == 45 - 39
    got = sample_negatives(s, 6, seed=3)
    assert sorted(map(tuple, got.tolist())) == sorted(removed)
    with pytest.raises(ValueError):
        sample_negatives(s, 7, seed=3)


def test_negatives_count_zero_and_complete_graph():
    s = k10_minus([])
    assert sample_negatives(k10_minus([(0, 1)]), 0, seed=0).shape == (0, 2)
    with pytest.raises(ValueError):
        sample_negatives(s, 1, seed=0)
    with pytest.raises(ValueError):
        make_folds(s, 5, seed=0)


def test_negatives_respect_exclusions_and_seed(sample20):
    pool = non_edges(sample20.num_nodes, sample20.pairs)
    excl = pool[:5]
    a = sample_negatives(sample20, 20, seed=9, exclusions=excl)
    b = sample_negatives(sample20, 20, seed=9, exclusions=excl)
    assert np.array_equal(a, b)
    assert not set(map(tuple, a.tolist())) & set(map(tuple, excl.tolist()))
    assert len(set(map(tuple, a.tolist()))) == 20


def fake_sample(num_pos, n=40):
    pairs = np.array(list(itertools.combinations(range(n), 2))[:num_pos], dtype=np.int64)
    return GraphSample(np.zeros((n, 4)), pairs, np.zeros((num_pos, 5)))


def test_fold_sizes_for_123_positives():
    folds = make_folds(fake_sample(123), 5, seed=0)
    assert sorted(len(f.val_positive) for f in folds) == [24, 24, 25, 25, 25]


def test_folds_partition_and_balance():
    s = fake_sample(123)
    folds = make_folds(s, 5, seed=4)
    all_pos = set(map(tuple, s.pairs.tolist()))
    seen = []
    for f in folds:
        val = set(map(tuple, f.val_positive.tolist()))
        train = set(map(tuple, f.train_positive.tolist()))
        assert val | train == all_pos and not val & train
        assert len(f.train_negative) == len(f.train_positive)
        assert len(f.val_negative) == len(f.val_positive)
        assert not set(map(tuple, f.train_negative.tolist())) & set(map(tuple, f.val_negative.tolist()))
        assert not set(map(tuple, f.train_negative.tolist())) & all_pos
        seen.extend(val)
    assert sorted(seen) == sorted(all_pos)


def test_folds_deterministic():
    s = fake_sample(60)
    a, b = make_folds(s, 3, seed=8), make_folds(s, 3, seed=8)
    for fa, fb in zip(a, b):
        for name in ("train_positive", "val_positive", "train_negative", "val_negative"):
            assert np.array_equal(getattr(fa, name), getattr(fb, name))


def test_dense_graph_folds_stay_disjoint_and_balanced():
    s = k10_minus([(0, 5), (1, 6), (2, 7), (3, 8), (4, 9), (0, 2)])
    for f in make_folds(s, 5, seed=1):
        assert len(f.train_negative) == len(f.train_positive)
        assert len(f.val_negative) == len(f.val_positive)
        assert not set(map(tuple, f.train_negative.tolist())) & set(map(tuple, f.val_negative.tolist()))


def test_fewer_positives_than_folds():
    with pytest.raises(ValueError):
        make_folds(fake_sample(4), 5, seed=0)


def test_full_split_uses_every_link():
    s = fake_sample(50)
    f = full_split(s, seed=0)
    assert np.array_equal(f.train_positive, s.pairs) and len(f.val_positive) == 0
    assert len(f.train_negative) == 50


def test_feature_scaling_round_trip(sample20):
    sc = FeatureScaling.fit(sample20.node_features, sample20.pair_features)
    z = sc.nodes(sample20.node_features)
    assert z.mean(axis=0) == pytest.approx(np.zeros(4), abs=1e-12)
    back = FeatureScaling.from_dict(sc.to_dict())
    assert np.array_equal(back.edges(sample20.pair_features), sc.edges(sample20.pair_features))


def test_batch_marks_only_message_links(sample20):
    sc = FeatureScaling.fit(sample20.node_features, sample20.pair_features)
    msg = sample20.pairs[:10]
    query = np.concatenate([sample20.pairs[5:15], non_edges(20, sample20.pairs)[:3]])
    b = build_batch(sample20, sc, msg, query)
    assert b.query_has_edge.tolist() == [True] * 5 + [False] * 8
    with pytest.raises(ValueError):
        build_batch(sample20, sc, non_edges(20, sample20.pairs)[:2], query)


def test_sample_dict_round_trip(sample20, tmp_path):
    back = GraphSample.from_dict(sample20.to_dict())
    assert np.array_equal(back.node_features, sample20.node_features)
    assert np.array_equal(back.pairs, sample20.pairs)
    assert np.array_equal(back.pair_features, sample20.pair_features)
    sample20.save(tmp_path / "s.json")
