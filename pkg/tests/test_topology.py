import io
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from connaware.rng import Domain, stream
from connaware.topology import (
    ClusterDigraph,
    ConfigError,
    EdgeListFormatError,
    GraphInvariantError,
    TopologyConfig,
    assemble_network,
    degree_summary,
    delete_edges,
    deletion_count,
    equal_neighbor_matrix,
    from_edges,
    generate_regular_cluster,
    read_edge_list,
    write_edge_list,
)


def clique(n):
    return from_edges(n, [(i, j) for i in range(n) for j in range(n) if i != j])


CYCLE3 = from_edges(3, [(0, 1), (1, 2), (2, 0)])


def one_cluster(n, k_hi=None, seed=0, p=0.0, balanced=False):
    k_hi = n - 1 if k_hi is None else k_hi
    return TopologyConfig(n=n, c=1, cluster_sizes=(n,), k_range=(1, k_hi), p_fail=p, seed=seed, balanced_mode=balanced)


# --- construction -----------------------------------------------------------


@pytest.mark.parametrize("k", range(1, 10))
def test_regular_cluster_degrees(k):
    g = generate_regular_cluster(one_cluster(10), 0, 0, k)
    assert len(g.edges) == 10 * k
    assert np.all(g.out_degrees == k) and np.all(g.in_degrees == k)


def test_k9_on_ten_nodes_is_the_clique():
    g = generate_regular_cluster(one_cluster(10), 0, 0, 9)
    assert g.edges == clique(10).edges


def test_one_regular_on_three_nodes_is_a_directed_triangle():
    g = generate_regular_cluster(one_cluster(3, k_hi=1), 0, 0, 1)
    assert len(g.edges) == 3
    succ = dict(g.edges)
    v = 0
    seen = []
    for _ in range(3):
        seen.append(v)
        v = succ[v]
    assert v == 0 and sorted(seen) == [0, 1, 2]


def test_regular_cluster_is_deterministic_and_round_dependent():
    cfg = TopologyConfig(seed=5)
    a = generate_regular_cluster(cfg, 2, 3, 7)
    b = generate_regular_cluster(cfg, 2, 3, 7)
    assert a == b
    assert any(generate_regular_cluster(cfg, 2, t, 7).edges != a.edges for t in range(4, 8))


def test_cluster_vertices_are_global_ids():
    cfg = TopologyConfig()
    g = generate_regular_cluster(cfg, 3, 0, 6)
    assert g.vertices == tuple(range(30, 40))
    assert all(30 <= i < 40 and 30 <= j < 40 for i, j in g.edges)


@pytest.mark.parametrize(
    "kw",
    [
        dict(n=70, c=7, cluster_sizes=(10,) * 6 + (11,)),
        dict(k_range=(6, 10)),
        dict(p_fail=1.0),
        dict(p_fail=-0.1),
        dict(k_range=(0, 9)),
    ],
)
def test_config_rejects_bad_values(kw):
    with pytest.raises(ConfigError):
        TopologyConfig(**kw)


@pytest.mark.parametrize(
    "edges",
    [[(0, 0)], [(0, 5)]],
)
def test_digraph_rejects_loops_and_foreign_endpoints(edges):
    with pytest.raises(GraphInvariantError):
        from_edges(3, edges)


# --- deletion ---------------------------------------------------------------


def test_deletion_count_floors():
    assert deletion_count(0.1, 70) == 7
    assert deletion_count(0.2, 48) == 9
    assert deletion_count(0.29, 100) == 29  # product rounds to 28.999...
    assert deletion_count(0.0, 90) == 0


def test_ten_percent_of_seventy_edges():
    g = generate_regular_cluster(one_cluster(10), 0, 0, 7)
    h = delete_edges(g, 0.1, stream(0, Domain.TOPOLOGY, 0, 0, 2))
    assert len(h.edges) == 63 and h.edges < g.edges
    assert h.deletion_shortfall == 0


def test_zero_failure_probability_is_identity():
    g = generate_regular_cluster(one_cluster(10), 0, 0, 7)
    assert delete_edges(g, 0.0, np.random.default_rng(1)) == g


@pytest.mark.parametrize("seed", range(10))
def test_balanced_deletion_keeps_degree_balance(seed):
    g = generate_regular_cluster(one_cluster(10, seed=seed), 0, 0, 6)
    h = delete_edges(g, 0.2, stream(seed, Domain.TOPOLOGY, 0, 0, 2), balanced=True)
    assert len(h.edges) == 48
    assert np.array_equal(h.in_degrees, h.out_degrees)
    assert h.out_degrees.min() >= 1


@settings(max_examples=60, deadline=None)
@given(
    k=st.integers(1, 9),
    p=st.floats(0.0, 0.95),
    seed=st.integers(0, 2**32),
    balanced=st.booleans(),
)
def test_deletion_never_strands_a_vertex(k, p, seed, balanced):
    g = generate_regular_cluster(one_cluster(10, seed=seed), 0, 0, k)
    h = delete_edges(g, p, np.random.default_rng(seed), balanced=balanced)
    assert h.out_degrees.min() >= 1
    assert h.edges <= g.edges
    assert len(g.edges) - len(h.edges) + h.deletion_shortfall == deletion_count(p, len(g.edges))
    if balanced:
        assert np.array_equal(h.in_degrees, h.out_degrees)


# --- degree summaries -------------------------------------------------------


def test_clique_summary():
    ds = degree_summary(clique(10))
    assert (ds.d_out_min, ds.d_out_max, ds.d_in_max) == (9, 9, 9)
    assert ds.alpha == pytest.approx(0.9) and ds.eps == 0 and ds.varphi == 0
    assert ds.balanced


def test_triangle_summary():
    ds = degree_summary(CYCLE3)
    assert ds.d_out_min == 1 and ds.alpha == pytest.approx(1 / 3) and ds.eps == 0


def _constructed_6_7_8():
    """Circulant with offsets 1..6 plus edges 0->7 and 9->7: out-degrees 6 or 7, in-degree of 7 is 8."""
    edges = {(i, (i + s) % 10) for i in range(10) for s in range(1, 7)}
    edges |= {(0, 7), (9, 7)}
    return from_edges(10, sorted(edges))


def test_constructed_summary_matches_hand_values():
    g = _constructed_6_7_8()
    ds = degree_summary(g)
    assert (ds.d_out_min, ds.d_out_max, ds.d_in_max) == (6, 7, 8)
    # exact rational oracle
    a = Fraction(6, 10)
    e = Fraction(7 - 6, 6)
    v = Fraction(8 - 6, 6)
    assert ds.alpha == pytest.approx(float(a), abs=1e-15)
    assert ds.eps == pytest.approx(float(e), abs=1e-15)
    assert ds.varphi == pytest.approx(float(v), abs=1e-15)
    assert ds.alpha_minus == pytest.approx(float(1 / a - 1), abs=1e-15)
    assert ds.eps_net == pytest.approx(float(v + e / a), abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), rnd=st.integers(0, 50))
def test_summary_invariants(seed, rnd):
    net = assemble_network(TopologyConfig(seed=seed, p_fail=0.2), rnd)
    for g in net.clusters:
        ds = degree_summary(g)
        assert 1 <= ds.d_out_min <= ds.d_out_max <= ds.n_l - 1
        assert 0 < ds.alpha < 1 and ds.eps >= 0 and ds.varphi >= 0
        assert ds.alpha_minus == pytest.approx(1 / ds.alpha - 1, rel=1e-15)


# --- equal-neighbor matrix --------------------------------------------------


def test_triangle_matrix_is_the_cyclic_permutation():
    A = equal_neighbor_matrix(CYCLE3)
    P = np.zeros((3, 3))
    P[1, 0] = P[2, 1] = P[0, 2] = 1.0
    assert np.array_equal(A, P)


def test_three_clique_matrix():
    A = equal_neighbor_matrix(clique(3))
    assert np.array_equal(A, (np.ones((3, 3)) - np.eye(3)) / 2)


def test_matrix_entries_match_edge_definition():
    net = assemble_network(TopologyConfig(seed=3), 0)
    for g in net.clusters:
        A = equal_neighbor_matrix(g)
        loc = g.local_index
        expect = np.zeros_like(A)
        for j, i in g.edges:
            expect[loc[i], loc[j]] = 1.0 / sum(1 for s, _ in g.edges if s == j)
        assert np.array_equal(A, expect)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), rnd=st.integers(0, 100), p=st.sampled_from([0.0, 0.1, 0.2, 0.5]))
def test_columns_sum_to_one(seed, rnd, p):
    for A in assemble_network(TopologyConfig(seed=seed, p_fail=p), rnd).blocks():
        assert np.max(np.abs(A.sum(axis=0) - 1.0)) <= 1e-12


def test_matrix_rejects_stranded_vertex():
    g = ClusterDigraph(0, 0, (0, 1, 2), frozenset({(0, 1), (1, 0)}))
    with pytest.raises(GraphInvariantError):
        equal_neighbor_matrix(g)


# --- network ----------------------------------------------------------------


def test_default_network_shape():
    cfg = TopologyConfig()
    net = assemble_network(cfg, 0)
    assert len(net.clusters) == 7
    assert [g.n for g in net.clusters] == [10] * 7
    assert [g.vertices for g in net.clusters] == [cfg.cluster_vertices(l) for l in range(7)]


def test_base_degree_drawn_from_k_range():
    seen = set()
    for t in range(40):
        for g in assemble_network(TopologyConfig(seed=1, p_fail=0.0), t).clusters:
            k = int(g.out_degrees[0])
            assert np.all(g.out_degrees == k) and 6 <= k <= 9
            seen.add(k)
    assert seen == {6, 7, 8, 9}


def test_rounds_change_edges_not_membership():
    cfg = TopologyConfig(seed=11)
    a, b = assemble_network(cfg, 4), assemble_network(cfg, 5)
    assert [g.vertices for g in a.clusters] == [g.vertices for g in b.clusters]
    assert any(x.edges != y.edges for x, y in zip(a.clusters, b.clusters))


def test_network_is_reproducible():
    cfg = TopologyConfig(seed=42, p_fail=0.2)
    a, b = assemble_network(cfg, 9), assemble_network(cfg, 9)
    assert all(x == y for x, y in zip(a.clusters, b.clusters))
    assert all(np.array_equal(x, y) for x, y in zip(a.blocks(), b.blocks()))


def test_unequal_cluster_sizes():
    cfg = TopologyConfig(n=30, c=3, cluster_sizes=(8, 10, 12), k_range=(3, 5))
    net = assemble_network(cfg, 0)
    assert [g.n for g in net.clusters] == [8, 10, 12]


def test_strong_connectivity_flag():
    assert clique(4).is_strongly_connected()
    assert not from_edges(4, [(0, 1), (1, 0), (2, 3), (3, 2)]).is_strongly_connected()


# --- edge-list files --------------------------------------------------------


def test_edge_list_round_trip():
    g = assemble_network(TopologyConfig(seed=2), 3).clusters[4]
    buf = io.StringIO()
    write_edge_list(g, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "cluster 4 round 3 n 10"
    assert len(lines) == 1 + len(g.edges)
    h = read_edge_list(lines, vertex_offset=40)
    assert h == g


@pytest.mark.parametrize(
    "text,line",
    [
        ("clusters 0 round 0 n 3\n0 1\n", 1),
        ("cluster 0 round 0 n 3\n0 1\n1 x\n", 3),
        ("cluster 0 round 0 n 3\n0 1\n1 7\n", 3),
        ("cluster 0 round 0 n 3\n0 1 2\n", 2),
        ("cluster 0 round 0 n 3\n0 1\n0 1\n", 3),
    ],
)
def test_malformed_edge_lists_name_the_line(text, line):
    with pytest.raises(EdgeListFormatError, match=f"line {line}"):
        read_edge_list(text.splitlines())
