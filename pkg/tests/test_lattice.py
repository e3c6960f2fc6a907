import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perclap.lattice import (BoxGeometry, Configuration, cluster_decomposition,
                             cluster_statistics, configuration_from_edges, enumerate_edges,
                             full_configuration, percolating_proxy, sample_configuration,
                             split_seed)


def test_chain_edges():
    assert enumerate_edges(BoxGeometry(1, 3)) == [(0, 1), (1, 2)]


@pytest.mark.parametrize("d,L,topology,count", [
    (2, 3, "free", 12),
    (2, 4, "periodic", 32),
    (3, 3, "free", 54),
    (2, 2, "periodic", 4),
    (1, 1, "free", 0),
])
def test_edge_counts(d, L, topology, count):
    g = BoxGeometry(d, L, topology)
    assert g.n_edges == count
    assert len(enumerate_edges(g)) == count


def _lattice_neighbours(g):
    coords = g.coords()
    pairs = set()
    for x, cx in enumerate(coords):
        for axis in range(g.d):
            cy = cx.copy()
            cy[axis] += 1
            if cy[axis] == g.side:
                if not g.periodic:
                    continue
                cy[axis] = 0
            y = g.index(cy)
            if x != y:
                pairs.add((min(x, y), max(x, y)))
    return pairs


@given(d=st.integers(1, 3), L=st.integers(1, 5), periodic=st.booleans())
@settings(max_examples=60, deadline=None)
def test_edge_enumeration_is_a_bijection(d, L, periodic):
    g = BoxGeometry(d, L, "periodic" if periodic else "free")
    edges = [tuple(sorted(e)) for e in enumerate_edges(g)]
    assert len(edges) == len(set(edges))
    assert set(edges) == _lattice_neighbours(g)


def test_row_major_index():
    g = BoxGeometry(3, 4)
    assert g.index([1, 2, 3]) == 1 * 16 + 2 * 4 + 3
    assert np.array_equal(g.coords()[g.index([1, 2, 3])], [1, 2, 3])


@pytest.mark.parametrize("bad", [dict(d=0, side=3), dict(d=2, side=0),
                                 dict(d=2, side=3, topology="mobius")])
def test_geometry_validation(bad):
    with pytest.raises(ValueError):
        BoxGeometry(**bad)


def test_degenerate_probabilities():
    g = BoxGeometry(2, 6, "periodic")
    assert sample_configuration(g, 0.0, 3).n_open == 0
    assert sample_configuration(g, 1.0, 3).n_open == g.n_edges
    with pytest.raises(ValueError):
        sample_configuration(g, 1.5, 3)


def test_sampling_reproducible_and_monotone_in_p():
    g = BoxGeometry(2, 10)
    a = sample_configuration(g, 0.4, 77)
    b = sample_configuration(g, 0.4, 77)
    c = sample_configuration(g, 0.6, 77)
    assert np.array_equal(a.occupation, b.occupation)
    assert np.all(c.occupation[a.occupation])


def test_open_count_binomial():
    g = BoxGeometry(2, 64)
    n = g.n_edges
    assert n == 8064
    sd = np.sqrt(n * 0.25)
    for s in range(100):
        k = sample_configuration(g, 0.5, split_seed(11, s)).n_open
        assert abs(k - 0.5 * n) <= 4 * sd


def test_split_seed_distinct():
    seeds = {split_seed(5, i) for i in range(10_000)}
    assert len(seeds) == 10_000
    assert split_seed(5, 3) == split_seed(5, 3)
    assert split_seed(5, 3) != split_seed(6, 3)


def test_configuration_json_round_trip():
    c = sample_configuration(BoxGeometry(3, 5, "periodic"), 0.3, 12)
    back = Configuration.from_json(c.to_json())
    assert back.geometry == c.geometry and back.seed == c.seed and back.p == c.p
    assert np.array_equal(back.occupation, c.occupation)
    assert set(c.to_json()) == {"d", "L", "topology", "p", "seed", "occupation"}


def test_configuration_length_checked():
    with pytest.raises(ValueError):
        Configuration(BoxGeometry(2, 3), np.ones(5, bool), 0.5, 0)


def test_all_closed_and_all_open_clusters():
    g = BoxGeometry(2, 5)
    closed = cluster_decomposition(full_configuration(g, False))
    assert closed.component_count == g.n_vertices == closed.isolated_count
    stats = cluster_statistics(closed)
    assert stats["component_density"] == 1.0 and stats["isolated_density"] == 1.0
    full = cluster_decomposition(full_configuration(g))
    assert full.component_count == 1
    stats = cluster_statistics(full)
    assert stats["component_density"] == 1 / g.n_vertices and stats["giant_fraction"] == 1.0


def test_hand_enumerated_clusters():
    g = BoxGeometry(2, 3)
    decomp = cluster_decomposition(configuration_from_edges(g, [(0, 1), (1, 2)]))
    assert sorted(decomp.sizes.tolist()) == [1] * 6 + [3]
    assert decomp.component_count == 7 and decomp.isolated_count == 6
    assert decomp.labels[0] == decomp.labels[1] == decomp.labels[2]


def _bfs_partition(config):
    g = config.geometry
    adj = {x: set() for x in range(g.n_vertices)}
    u, v = config.open_edges()
    for a, b in zip(u.tolist(), v.tolist()):
        adj[a].add(b)
        adj[b].add(a)
    seen, parts = set(), []
    for x in range(g.n_vertices):
        if x in seen:
            continue
        comp, stack = {x}, [x]
        while stack:
            y = stack.pop()
            for z in adj[y] - comp:
                comp.add(z)
                stack.append(z)
        seen |= comp
        parts.append(frozenset(comp))
    return set(parts)


@given(d=st.integers(1, 3), L=st.integers(2, 5), periodic=st.booleans(),
       p=st.floats(0, 1), seed=st.integers(0, 2**32))
@settings(max_examples=80, deadline=None)
def test_labels_match_breadth_first_search(d, L, periodic, p, seed):
    config = sample_configuration(BoxGeometry(d, L, "periodic" if periodic else "free"), p, seed)
    decomp = cluster_decomposition(config)
    parts = {frozenset(decomp.members(k).tolist()) for k in range(decomp.component_count)}
    assert parts == _bfs_partition(config)
    assert decomp.sizes.sum() == config.geometry.n_vertices
    assert decomp.isolated_count == int(np.count_nonzero(decomp.sizes == 1))
    again = cluster_decomposition(config)
    assert np.array_equal(decomp.labels, again.labels)


def test_spanning_free_box():
    g = BoxGeometry(2, 4)
    row = [(g.index([0, j]), g.index([0, j + 1])) for j in range(3)]
    decomp = cluster_decomposition(configuration_from_edges(g, row))
    assert decomp.labels[0] in decomp.spanning_ids
    assert percolating_proxy(decomp) == decomp.labels[0]
    none = cluster_decomposition(configuration_from_edges(g, row[:2]))
    assert len(none.spanning_ids) == 0
    assert percolating_proxy(none) is None
    assert percolating_proxy(none, strict=False) == none.largest_id


def test_wrapping_needs_a_noncontractible_loop():
    g = BoxGeometry(2, 4, "periodic")
    ring = [(g.index([1, j]), g.index([1, (j + 1) % 4])) for j in range(4)]
    assert cluster_decomposition(configuration_from_edges(g, ring)).spanning_ids
    # a long open path that does not close around the torus does not wrap
    assert not cluster_decomposition(configuration_from_edges(g, ring[:3])).spanning_ids
    square = [(g.index([0, 0]), g.index([0, 1])), (g.index([0, 1]), g.index([1, 1])),
              (g.index([1, 1]), g.index([1, 0])), (g.index([1, 0]), g.index([0, 0]))]
    assert not cluster_decomposition(configuration_from_edges(g, square)).spanning_ids


def test_supercritical_largest_cluster_wraps():
    g = BoxGeometry(2, 64, "periodic")
    hits = 0
    for s in range(100):
        decomp = cluster_decomposition(sample_configuration(g, 0.7, split_seed(2, s)))
        hits += decomp.largest_id in decomp.spanning_ids
    assert hits >= 95


def test_isolated_density_matches_closed_form():
    g = BoxGeometry(2, 128, "periodic")
    vals = np.array([cluster_statistics(cluster_decomposition(
        sample_configuration(g, 0.7, split_seed(4, s))))["isolated_density"] for s in range(50)])
    expected = 0.3 ** 4
    sigma = vals.std(ddof=1) / np.sqrt(vals.size)
    assert abs(vals.mean() - expected) <= 4 * sigma


def test_size_histogram_counts_clusters():
    decomp = cluster_decomposition(sample_configuration(BoxGeometry(2, 12), 0.5, 9))
    hist = cluster_statistics(decomp)["size_histogram"]
    assert sum(hist.values()) == decomp.component_count
    assert sum(k * v for k, v in hist.items()) == 144


def test_small_torus_has_no_duplicate_edges():
    g = BoxGeometry(2, 2, "periodic")
    pairs = [tuple(sorted(e)) for e in enumerate_edges(g)]
    assert sorted(pairs) == sorted(set(itertools.chain(pairs)))
    assert len(pairs) == 4
