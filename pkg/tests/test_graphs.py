"""Graph construction, operators, hop masks, and permutation symmetry."""

import json

import numpy as np
import pytest

from iflow.errors import EmptyGraphError
from iflow.graphs import (
    build_graph,
    cheb_basis,
    chordal_cycle,
    graph_average,
    graph_from_json,
    graph_to_json,
    hop_masks,
    path_graph,
    single_node,
)


def test_three_node_path_adjacency():
    g = path_graph(3)
    expected = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]])
    np.testing.assert_array_equal(g.adjacency, expected)


def test_single_node():
    g = single_node()
    np.testing.assert_array_equal(g.adjacency, [[1.0]])
    np.testing.assert_array_equal(g.laplacian, [[0.0]])


def test_empty_graph_rejected():
    with pytest.raises(EmptyGraphError):
        build_graph(0, [])


def test_duplicate_edges_ignored():
    g = build_graph(3, [(0, 1), (1, 0), (0, 1), (1, 2)])
    assert g.edges == ((0, 1), (1, 2))


def test_laplacian_is_psd_and_consistent():
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = int(rng.integers(2, 10))
        edges = [(int(i), int(j)) for i in range(v) for j in range(i + 1, v)
                 if rng.random() < 0.4]
        g = build_graph(v, edges)
        np.testing.assert_array_equal(g.laplacian,
                                      g.degree - g.adjacency)
        evals = np.linalg.eigvalsh(g.laplacian)
        assert evals.min() >= -1e-10
        scaled = np.linalg.eigvalsh(g.laplacian_scaled)
        assert scaled.min() >= -1.0 - 1e-8 and scaled.max() <= 1.0 + 1e-8


def test_chordal_cycle_degrees_vs_brute_force():
    g = chordal_cycle(7)
    expected = set()
    for i in range(7):
        expected.add(tuple(sorted((i, (i + 1) % 7))))
        j = (2 * i) % 7
        if j != i:
            expected.add(tuple(sorted((i, j))))
    adj = np.eye(7)
    for i, j in expected:
        adj[i, j] = adj[j, i] = 1.0
    np.testing.assert_array_equal(g.adjacency, adj)
    np.testing.assert_array_equal(np.diagonal(g.degree), adj.sum(axis=1))


def test_graph_average_single_node():
    np.testing.assert_array_equal(graph_average(single_node()), [[1.0]])


def test_graph_average_three_node_path():
    p = graph_average(path_graph(3))
    expected = np.array([
        [0.5, 0.5, 0.0],
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        [0.0, 0.5, 0.5],
    ])
    np.testing.assert_allclose(p, expected)


def test_graph_average_row_stochastic():
    rng = np.random.default_rng(1)
    for _ in range(10):
        v = int(rng.integers(1, 9))
        edges = [(int(i), int(j)) for i in range(v) for j in range(i + 1, v)
                 if rng.random() < 0.5]
        p = graph_average(build_graph(v, edges))
        np.testing.assert_allclose(p @ np.ones(v), np.ones(v), atol=1e-12)


def test_cheb_basis_t0_identity():
    basis = cheb_basis(path_graph(3), 0)
    np.testing.assert_array_equal(basis[0], np.eye(3))


def test_cheb_basis_t2_recurrence():
    g = chordal_cycle(7)
    basis = cheb_basis(g, 2)
    lt = g.laplacian_scaled
    np.testing.assert_allclose(basis[2], 2.0 * lt @ lt - np.eye(7), atol=1e-12)


def test_cheb_basis_symmetric_and_equivariant():
    """T_k commutes with the reversal automorphism of the 3-node path."""
    g = path_graph(3)
    pi = np.eye(3)[::-1]
    for t_k in cheb_basis(g, 3):
        np.testing.assert_allclose(t_k, t_k.T, atol=1e-12)
        np.testing.assert_allclose(pi @ t_k @ pi.T, t_k, atol=1e-12)


def test_hop_masks_orders():
    g = path_graph(3)
    masks = hop_masks(g, [0, 1, 2])
    np.testing.assert_array_equal(masks[0].matrix, np.eye(3))
    np.testing.assert_array_equal(masks[1].matrix, (g.adjacency > 0).astype(float))
    np.testing.assert_array_equal(masks[2].matrix, np.ones((3, 3)))


def test_hop_masks_match_bfs_and_are_monotone():
    rng = np.random.default_rng(2)
    for _ in range(10):
        v = int(rng.integers(2, 9))
        edges = [(int(i), int(j)) for i in range(v) for j in range(i + 1, v)
                 if rng.random() < 0.3]
        g = build_graph(v, edges)
        orders = list(range(v))
        masks = hop_masks(g, orders)

        # BFS oracle over the self-looped adjacency
        dist = np.full((v, v), np.inf)
        for s in range(v):
            dist[s, s] = 0
            frontier = [s]
            d = 0
            seen = {s}
            while frontier:
                d += 1
                nxt = []
                for u in frontier:
                    for w in range(v):
                        if g.adjacency[u, w] > 0 and w not in seen:
                            seen.add(w)
                            dist[s, w] = d
                            nxt.append(w)
                frontier = nxt
        for mask in masks:
            expected = (dist <= mask.order).astype(float)
            np.testing.assert_array_equal(mask.matrix, expected)
        for lo, hi in zip(masks, masks[1:]):
            assert np.all(hi.matrix >= lo.matrix)


def test_graph_json_round_trip(tmp_path):
    g = chordal_cycle(7)
    doc = graph_to_json(g)
    assert set(doc) == {"num_nodes", "edges"}
    g2 = graph_from_json(json.loads(json.dumps(doc)))
    np.testing.assert_array_equal(g.adjacency, g2.adjacency)
    assert g.edges == g2.edges
