"""Graph structure and the operator family used throughout the package.

Graphs are undirected and unweighted with self-loops inserted at every node.
All derived operators (degree, Laplacians, Chebyshev bases, hop masks) are
computed once at construction; a :class:`GraphSpec` is immutable afterwards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGraphError
from .linalg import eig_sym

__all__ = [
    "GraphSpec",
    "HopMask",
    "build_graph",
    "graph_average",
    "cheb_basis",
    "hop_masks",
    "path_graph",
    "single_node",
    "chordal_cycle",
    "graph_to_json",
    "graph_from_json",
    "load_graph",
    "save_graph",
]


@dataclass(frozen=True)
class GraphSpec:
    num_nodes: int
    edges: tuple                # canonical sorted (i, j) pairs, i < j
    adjacency: np.ndarray       # with self-loops, symmetric
    degree: np.ndarray          # diagonal degree matrix of the adjacency
    laplacian: np.ndarray       # D - A
    laplacian_scaled: np.ndarray  # 2 L / lambda_max - I, spectrum in [-1, 1]
    lambda_max: float

    def __post_init__(self):
        for name in ("adjacency", "degree", "laplacian", "laplacian_scaled"):
            getattr(self, name).setflags(write=False)


@dataclass(frozen=True)
class HopMask:
    order: int
    matrix: np.ndarray          # 0/1, matrix[i, j] = 1 iff j within `order` hops of i

    def __post_init__(self):
        self.matrix.setflags(write=False)


def build_graph(num_nodes, edges):
    """Build a GraphSpec from an undirected edge list (0-based, duplicates ignored)."""
    if num_nodes <= 0:
        raise EmptyGraphError("a graph needs at least one node")
    canonical = set()
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < num_nodes and 0 <= j < num_nodes):
            raise ValueError(f"edge ({i}, {j}) references a node outside 0..{num_nodes - 1}")
        if i == j:
            continue  # self-loops are inserted unconditionally below
        canonical.add((min(i, j), max(i, j)))
    a = np.eye(num_nodes)
    for i, j in canonical:
        a[i, j] = 1.0
        a[j, i] = 1.0
    degree = np.diag(a.sum(axis=1))
    lap = degree - a
    evals, _ = eig_sym(lap)
    lam_max = float(evals[-1])
    if lam_max > 1e-12:
        lap_scaled = 2.0 * lap / lam_max - np.eye(num_nodes)
    else:
        lap_scaled = -np.eye(num_nodes)  # single node / edgeless: L = 0
    return GraphSpec(
        num_nodes=num_nodes,
        edges=tuple(sorted(canonical)),
        adjacency=a,
        degree=degree,
        laplacian=lap,
        laplacian_scaled=lap_scaled,
        lambda_max=lam_max,
    )


def graph_average(graph):
    """Row-stochastic averaging operator D^{-1} A."""
    return graph.adjacency / np.diagonal(graph.degree)[:, None]


def cheb_basis(graph, order):
    """Chebyshev polynomials [T_0, ..., T_order] of the scaled Laplacian."""
    if order < 0:
        raise ValueError("order must be >= 0")
    lt = graph.laplacian_scaled
    basis = [np.eye(graph.num_nodes)]
    if order >= 1:
        basis.append(lt.copy())
    for _ in range(2, order + 1):
        basis.append(2.0 * lt @ basis[-1] - basis[-2])
    return basis


def hop_masks(graph, orders):
    """0/1 reachability masks for each requested hop order."""
    orders = list(orders)
    if not orders or any(v < 0 for v in orders):
        raise ValueError("orders must be a nonempty list of nonnegative integers")
    n = graph.num_nodes
    support = graph.adjacency > 0
    reach = {0: np.eye(n, dtype=bool)}
    current = np.eye(n, dtype=bool)
    for v in range(1, max(orders) + 1):
        current = current @ support
        reach[v] = current
    return [HopMask(order=v, matrix=reach[v].astype(np.float64)) for v in orders]


# ---------------------------------------------------------------------- #
# stock graphs

def path_graph(num_nodes):
    return build_graph(num_nodes, [(i, i + 1) for i in range(num_nodes - 1)])


def single_node():
    return build_graph(1, [])


def chordal_cycle(num_nodes=7):
    """Cycle 0-1-...-n-0 plus chords i -> 2i mod n (an expander family)."""
    edges = [(i, (i + 1) % num_nodes) for i in range(num_nodes)]
    for i in range(num_nodes):
        j = (2 * i) % num_nodes
        if j != i:
            edges.append((i, j))
    return build_graph(num_nodes, edges)


# ---------------------------------------------------------------------- #
# persistence: {"num_nodes": int, "edges": [[i, j], ...]}

def graph_to_json(graph):
    return {"num_nodes": graph.num_nodes, "edges": [list(e) for e in graph.edges]}


def graph_from_json(doc):
    return build_graph(int(doc["num_nodes"]), doc["edges"])


def save_graph(graph, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_json(graph), fh, indent=2)
        fh.write("\n")


def load_graph(path):
    with open(path, encoding="utf-8") as fh:
        return graph_from_json(json.load(fh))
