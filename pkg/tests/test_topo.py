import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.csgraph import floyd_warshall

from cpagraph import rng
from cpagraph.graphio import BOND_ORDERS, parse_smiles
from cpagraph.synthetic import complete_graph, path_graph, random_corpus, random_molecule, star_graph
from cpagraph.topo import (INF, all_pairs_spd, corpus_coverage, coverage, degree_bin, degree_bins,
                           shortest_path_edge_counts, spd_bin, supports_from_spd, truncated_spd)


def _fw(g):
    a = np.zeros((g.n, g.n))
    for b in g.bonds:
        a[b.u, b.v] = a[b.v, b.u] = 1
    return floyd_warshall(a, directed=False, unweighted=True)


def _corpus(n=100):
    return random_corpus(n, rng.stream(0, "topo"), (1, 20))


def test_all_pairs_matches_floyd_warshall():
    graphs = _corpus(40) + [parse_smiles("C1CC1.CCO")]
    for g in graphs:
        ref = _fw(g)
        got = all_pairs_spd(g).entries.astype(float)
        got[got == INF] = np.inf
        np.testing.assert_array_equal(got, ref)


def test_disconnected_pairs_are_infinite():
    spd = all_pairs_spd(parse_smiles("CC.O"))
    assert spd.is_inf()[0, 2] and spd.is_inf()[2, 1]
    assert not spd.is_inf()[0, 1]


def test_path_coverage_exact():
    assert coverage(path_graph(10), 3) == pytest.approx(58.0, abs=1e-12)
    assert coverage(complete_graph(5), 3) == 100.0
    assert coverage(path_graph(10), None) == 100.0


def test_truncated_equals_filtered_full_bfs():
    for g in _corpus(100):
        full = all_pairs_spd(g)
        for k in (1, 2, 3, 5, None):
            a = truncated_spd(g, k)
            b = supports_from_spd(full, k)
            assert a.as_sets() == b.as_sets()
            for x, y in zip(a.spd, b.spd):
                np.testing.assert_array_equal(x, y)


def test_support_order_is_self_first_then_distance():
    sup = truncated_spd(parse_smiles("CC(C)CC"), 2)
    for i, (js, ds) in enumerate(zip(sup.neighbors, sup.spd)):
        assert js[0] == i and ds[0] == 0
        assert list(zip(ds, js)) == sorted(zip(ds, js))


def test_bins_clip():
    assert [spd_bin(d, 3) for d in range(6)] == [0, 1, 2, 3, 3, 3]
    with pytest.raises(ValueError):
        spd_bin(INF, 3)
    assert degree_bin(40) == 15
    assert degree_bins(star_graph(20))[0] == 15
    with pytest.raises(ValueError):
        truncated_spd(path_graph(3), 0)


def test_corpus_coverage_is_median():
    graphs = [path_graph(10), complete_graph(4), path_graph(3)]
    assert corpus_coverage(graphs, 3) == float(np.median([58.0, 100.0, 100.0]))


def _brute_path_counts(g):
    G = nx.Graph()
    G.add_nodes_from(range(g.n))
    G.add_edges_from(b.endpoints for b in g.bonds)
    bmap = g.bond_map()
    out = np.zeros((g.n, g.n, len(BOND_ORDERS)))
    for s in range(g.n):
        for t in range(g.n):
            if s == t or not nx.has_path(G, s, t):
                continue
            paths = list(nx.all_shortest_paths(G, s, t))
            for p in paths:
                for u, v in zip(p[:-1], p[1:]):
                    out[s, t, BOND_ORDERS.index(bmap[(min(u, v), max(u, v))].order)] += 1
            out[s, t] /= len(paths)
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5000), st.integers(2, 14))
def test_path_counts_match_enumeration(seed, n):
    g = random_molecule(np.random.default_rng(seed), n, ring_bonds=2)
    got = shortest_path_edge_counts(g, len(BOND_ORDERS), lambda b: BOND_ORDERS.index(b.order))
    np.testing.assert_allclose(got, _brute_path_counts(g), atol=1e-12)
