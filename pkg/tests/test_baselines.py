import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.csgraph import minimum_spanning_tree

from wsntopo.baselines import (
    ORACLE_MAX_NODES,
    brute_force_optimal,
    iter_prufer_trees,
    mst_topology,
    prufer_decode,
    prufer_encode,
    random_topology,
    star_topology,
)
from wsntopo.harness import generate_instance
from wsntopo.network import SUBTREE, lifetime_deterministic, validate_topology


@pytest.mark.parametrize("n,count", [(2, 1), (3, 3), (4, 16), (5, 125), (6, 1296)])
def test_cayley_counts_and_distinct(n, count):
    spec = generate_instance(n, seed=0)
    trees = [t.parent for t in iter_prufer_trees(spec)]
    assert len(trees) == count == len(set(trees))
    for t in trees:
        validate_topology(spec, t)


@settings(max_examples=60, deadline=None)
@given(m=st.integers(3, 9), data=st.data())
def test_prufer_round_trip(m, data):
    seq = data.draw(st.lists(st.integers(0, m - 1), min_size=m - 2, max_size=m - 2))
    edges = prufer_decode(seq, m)
    assert len(edges) == m - 1
    assert prufer_encode(edges, m) == seq


def test_prufer_length_checked():
    with pytest.raises(ValueError):
        prufer_decode([0, 1, 2], 4)


def _scipy_mst_weight(spec):
    idx = np.flatnonzero(spec.active)
    d = spec.distances[np.ix_(idx, idx)]
    return minimum_spanning_tree(d).sum()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 25))
def test_mst_weight_matches_scipy(seed, n):
    spec = generate_instance(n, seed=seed)
    topo = mst_topology(spec)
    validate_topology(spec, topo)
    assert topo.total_length(spec) == pytest.approx(_scipy_mst_weight(spec), rel=1e-12)


def test_mst_on_collinear_chain_is_the_chain():
    pos = [[0, 0], [300, 0], [100, 0], [200, 0]]
    spec = generate_instance(4, seed=0).replace(positions=np.array(pos, float))
    assert mst_topology(spec).parent == (-1, 3, 0, 2)


def test_mst_respects_inactive_nodes():
    spec = generate_instance(9, seed=5).with_active([1, 1, 0, 1, 1, 0, 1, 1, 1])
    topo = mst_topology(spec)
    validate_topology(spec, topo)
    assert topo.total_length(spec) == pytest.approx(_scipy_mst_weight(spec))


def test_mst_not_longer_than_random_trees():
    spec = generate_instance(10, seed=2)
    w = mst_topology(spec).total_length(spec)
    for s in range(1000):
        assert w <= random_topology(spec, s).total_length(spec) + 1e-9


def test_random_topology_reaches_every_tree_on_four_nodes():
    spec = generate_instance(4, seed=0)
    seen = {random_topology(spec, s).parent for s in range(2000)}
    assert seen == {t.parent for t in iter_prufer_trees(spec)}


def test_random_topology_seeded():
    spec = generate_instance(12, seed=1)
    assert random_topology(spec, 42) == random_topology(spec, 42)


def test_star_uses_only_active_sensors():
    spec = generate_instance(5, seed=0).with_active([1, 0, 1, 1, 0])
    assert star_topology(spec).parent == (-1, -1, 0, 0, -1)


@pytest.mark.parametrize("mode", ["literal", SUBTREE])
@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_oracle_matches_slow_enumeration(n, mode):
    spec = generate_instance(n, seed=n + 11, load_mode=mode)
    res = brute_force_optimal(spec, batch_size=97)
    lifetimes = {t.parent: lifetime_deterministic(spec, t) for t in iter_prufer_trees(spec)}
    best = max(lifetimes.values())
    assert res.best_lifetime == best
    assert res.best_topology.parent == min(p for p, v in lifetimes.items() if v == best)
    assert res.tree_count == res.evaluated_count == n ** (n - 2)


def test_oracle_dominates_heuristics():
    for seed in range(5):
        spec = generate_instance(6, seed=seed)
        res = brute_force_optimal(spec)
        others = [star_topology(spec), mst_topology(spec)] + [random_topology(spec, k) for k in range(20)]
        assert all(res.best_lifetime >= lifetime_deterministic(spec, t) for t in others)


def test_oracle_handles_inactive_and_refuses_large():
    spec = generate_instance(7, seed=1).with_active([1, 1, 1, 0, 1, 0, 1])
    res = brute_force_optimal(spec)
    assert res.tree_count == 5 ** 3
    validate_topology(spec, res.best_topology)
    with pytest.raises(ValueError, match="exhaustive"):
        brute_force_optimal(generate_instance(ORACLE_MAX_NODES + 1, seed=0))


def test_two_node_oracle():
    spec = generate_instance(2, seed=0)
    res = brute_force_optimal(spec)
    assert res.best_topology.parent == (-1, 0)
    assert res.tree_count == 1


def test_prufer_decode_independent_reference():
    # label sets of all sequences on 5 labels map onto distinct edge sets
    m = 5
    edge_sets = {frozenset(map(frozenset, prufer_decode(s, m))) for s in itertools.product(range(m), repeat=m - 2)}
    assert len(edge_sets) == m ** (m - 2)
