"""Seeded synthetic datasets and the labeled-graph CSV bundle format.

Every generator is a pure function of its arguments and RNG; the CLI derives
substreams from one seed so bundles are bitwise reproducible.  Labels are
0-based class indices.
"""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import CsvFormatError
from .graphs import (
    GraphSpec,
    build_graph,
    cheb_basis,
    chordal_cycle,
    graph_average,
    load_graph,
    path_graph,
    save_graph,
    single_node,
)

__all__ = [
    "LabeledDataset",
    "eight_gaussians",
    "two_moons",
    "three_node_convex",
    "three_node_nonconvex",
    "gp_spectral",
    "gp_spectral_covariance",
    "gp_local",
    "gp_local_covariance",
    "synthesize",
    "save_bundle",
    "load_bundle",
    "load_csv",
]

SYNTHETIC_KINDS = (
    "eight_gaussians",
    "two_moons",
    "three_node_convex",
    "three_node_nonconvex",
    "gp_spectral",
    "gp_local",
)


@dataclass
class LabeledDataset:
    x: np.ndarray            # (N, V, C)
    y: np.ndarray            # (N, V) int labels in 0..K-1
    graph: GraphSpec
    n_classes: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.shape[:2] != self.y.shape or self.x.shape[1] != self.graph.num_nodes:
            raise ValueError(
                f"inconsistent dataset shapes x={self.x.shape} y={self.y.shape} "
                f"V={self.graph.num_nodes}"
            )
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in 0..{self.n_classes - 1}")

    def __len__(self):
        return self.x.shape[0]

    @property
    def channels(self):
        return self.x.shape[2]

    def subset(self, idx):
        return LabeledDataset(self.x[idx], self.y[idx], self.graph, self.n_classes)


def _assert_spd(sigma, tol=1e-8):
    w = np.linalg.eigvalsh(0.5 * (sigma + sigma.T))
    if w.min() <= tol:
        raise ValueError(f"covariance is not positive definite (min eig {w.min():.3e})")


# ---------------------------------------------------------------------- #
# non-graph toys (single-node graph, V = 1)

def eight_gaussians(n_per_label, rng, radius=4.0, component_sigma=0.25):
    """Four labels, each owning an opposite pair of Gaussian blobs on a circle.

    The eight component means sit on a circle of the given radius at 45-degree
    spacing; label k owns the means at angles 45k and 45k + 180 degrees, and
    each draw picks one of its two components uniformly.
    """
    angles = np.deg2rad(45.0 * np.arange(8))
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    xs, ys = [], []
    for label in range(4):
        pair = means[[label, label + 4]]
        pick = rng.integers(0, 2, size=n_per_label)
        x = pair[pick] + component_sigma * rng.standard_normal((n_per_label, 2))
        xs.append(x)
        ys.append(np.full(n_per_label, label))
    x = np.concatenate(xs)[:, None, :]
    y = np.concatenate(ys)[:, None]
    return LabeledDataset(x, y, single_node(), n_classes=4)


def _moon_arcs(n_upper, n_lower, rng, noise):
    """Standard interleaved unit half-circles; lower arc offset by (1, -0.5)."""
    t_up = rng.uniform(0.0, np.pi, n_upper)
    t_lo = rng.uniform(0.0, np.pi, n_lower)
    upper = np.stack([np.cos(t_up), np.sin(t_up)], axis=1)
    lower = np.stack([1.0 - np.cos(t_lo), 1.0 - np.sin(t_lo) - 0.5], axis=1)
    if noise > 0:
        upper = upper + noise * rng.standard_normal(upper.shape)
        lower = lower + noise * rng.standard_normal(lower.shape)
    return upper, lower


def two_moons(n, rng, noise=0.08):
    """Interleaved half-circles: upper moon class 0, lower moon class 1."""
    n_upper = n // 2
    n_lower = n - n_upper
    upper, lower = _moon_arcs(n_upper, n_lower, rng, noise)
    x = np.concatenate([upper, lower])[:, None, :]
    y = np.concatenate([np.zeros(n_upper, dtype=int),
                        np.ones(n_lower, dtype=int)])[:, None]
    return LabeledDataset(x, y, single_node(), n_classes=2)


# ---------------------------------------------------------------------- #
# three-node graph tasks (V = 3, C = 2, binary node labels)

NODE_OFFSETS = np.array([[-4.0, 0.0], [0.0, 0.0], [4.0, 0.0]])


def _three_node_mix(h_sampler, n_per_y, rng):
    """Common pipeline: draw per-node H | Y, add node offsets, graph-average."""
    graph = path_graph(3)
    p_avg = graph_average(graph)
    xs, ys = [], []
    for labels in itertools.product((0, 1), repeat=3):
        labels = np.array(labels)
        h = h_sampler(labels, n_per_y, rng)            # (n, 3, 2)
        x = np.einsum("uv,nvc->nuc", p_avg, h + NODE_OFFSETS)
        xs.append(x)
        ys.append(np.tile(labels, (n_per_y, 1)))
    return LabeledDataset(np.concatenate(xs), np.concatenate(ys), graph,
                          n_classes=2)


def three_node_convex(n_per_y, rng, mean_offset=1.5, variance=0.1):
    """Gaussian node features mixed by the graph-average operator.

    Per node, H | Y=0 ~ N((+1.5, 0), 0.1 I) and H | Y=1 ~ N((-1.5, 0), 0.1 I);
    all eight binary label vectors appear with n_per_y draws each.
    """

    def sampler(labels, n, rng):
        mu = np.where(labels[:, None] == 0, mean_offset, -mean_offset)
        mu = np.concatenate([mu, np.zeros((3, 1))], axis=1)     # (3, 2)
        return mu[None] + np.sqrt(variance) * rng.standard_normal((n, 3, 2))

    return _three_node_mix(sampler, n_per_y, rng)


def three_node_nonconvex(n_per_y, rng, scale=1.5, noise=0.08):
    """Moon-shaped node features mixed by the graph-average operator.

    Per node, H | Y=0 draws from the upper moon arc and H | Y=1 from the
    lower one (the pair centered at the origin and scaled), so the pre-mix
    class supports are disjoint at zero noise but each post-mix node marginal
    stays ambiguous.
    """
    center = np.array([0.5, 0.25])

    def sampler(labels, n, rng):
        h = np.empty((n, 3, 2))
        for v, label in enumerate(labels):
            upper, lower = _moon_arcs(n, n, rng, noise=0.0)
            arc = upper if label == 0 else lower
            arc = scale * (arc - center)
            if noise > 0:
                arc = arc + noise * rng.standard_normal(arc.shape)
            h[:, v, :] = arc
        return h

    return _three_node_mix(sampler, n_per_y, rng)


# ---------------------------------------------------------------------- #
# Gaussian processes on graphs (C = 1, single dummy class)

def gp_spectral_covariance(graph=None, coeffs=(0.5, 0.1, 0.5)):
    """Covariance as a Chebyshev series of the scaled Laplacian."""
    if graph is None:
        graph = chordal_cycle(7)
    basis = cheb_basis(graph, len(coeffs) - 1)
    sigma = sum(a * t for a, t in zip(coeffs, basis))
    _assert_spd(sigma)
    return graph, sigma


def gp_spectral(n, rng, coeffs=(0.5, 0.1, 0.5)):
    """Zero-mean GP on the 7-node chordal cycle with a spectral covariance."""
    graph, sigma = gp_spectral_covariance(coeffs=coeffs)
    chol = np.linalg.cholesky(sigma)
    x = rng.standard_normal((n, graph.num_nodes)) @ chol.T
    y = np.zeros((n, graph.num_nodes), dtype=int)
    return LabeledDataset(x[:, :, None], y, graph, n_classes=1)


def gp_local_covariance():
    """3-node path covariance with 1-hop support: corr(0,1)=0.6, corr(1,2)=-0.4."""
    sigma = np.array([
        [1.0, 0.6, 0.0],
        [0.6, 1.0, -0.4],
        [0.0, -0.4, 1.0],
    ])
    _assert_spd(sigma)
    return path_graph(3), sigma


def gp_local(n, rng):
    """Zero-mean GP on the 3-node path with asymmetric 1-hop correlations."""
    graph, sigma = gp_local_covariance()
    chol = np.linalg.cholesky(sigma)
    x = rng.standard_normal((n, graph.num_nodes)) @ chol.T
    y = np.zeros((n, graph.num_nodes), dtype=int)
    return LabeledDataset(x[:, :, None], y, graph, n_classes=1)


# ---------------------------------------------------------------------- #
# unified synthesis entry point (used by the CLI)

def synthesize(spec, seed):
    """Build (train, test) datasets from a synthesis spec dict.

    Required keys: "kind" plus the kind's size parameter ("n_per_label" for
    labelled kinds, "n" for the GP kinds).  Train and test draw from distinct
    substreams of the seed.
    """
    kind = spec.get("kind")
    if kind not in SYNTHETIC_KINDS:
        raise KeyError("kind")
    rng_train = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    rng_test = np.random.default_rng(np.random.SeedSequence([seed, 1]))

    def build(rng):
        if kind == "eight_gaussians":
            return eight_gaussians(int(spec["n_per_label"]), rng,
                                   radius=float(spec.get("radius", 4.0)),
                                   component_sigma=float(spec.get("component_sigma", 0.25)))
        if kind == "two_moons":
            return two_moons(int(spec["n"]), rng,
                             noise=float(spec.get("noise", 0.08)))
        if kind == "three_node_convex":
            return three_node_convex(int(spec["n_per_label"]), rng)
        if kind == "three_node_nonconvex":
            return three_node_nonconvex(int(spec["n_per_label"]), rng)
        if kind == "gp_spectral":
            return gp_spectral(int(spec["n"]), rng,
                               coeffs=tuple(spec.get("coeffs", (0.5, 0.1, 0.5))))
        return gp_local(int(spec["n"]), rng)

    return build(rng_train), build(rng_test)


# ---------------------------------------------------------------------- #
# bundle persistence: graph.json + features.csv + labels.csv + meta.json
#
# features.csv holds N*V rows in node-major order (sample 0 node 0, sample 0
# node 1, ...) with C feature columns; labels.csv matches row for row.

def save_bundle(out_dir, train, test, meta=None):
    os.makedirs(out_dir, exist_ok=True)
    save_graph(train.graph, os.path.join(out_dir, "graph.json"))
    x = np.concatenate([train.x, test.x])
    y = np.concatenate([train.y, test.y])
    n, v, c = x.shape
    header = ",".join(f"f{j}" for j in range(c))
    rows = [header]
    flat = x.reshape(n * v, c)
    for row in flat:
        rows.append(",".join(repr(float(val)) for val in row))
    with open(os.path.join(out_dir, "features.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    with open(os.path.join(out_dir, "labels.csv"), "w", encoding="utf-8") as fh:
        fh.write("label\n")
        fh.write("\n".join(str(int(val)) for val in y.reshape(-1)) + "\n")
    doc = {
        "n_train": len(train),
        "n_test": len(test),
        "num_nodes": v,
        "channels": c,
        "classes": int(train.n_classes),
    }
    if meta:
        doc.update(meta)
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_bundle(bundle_dir):
    """Load a bundle written by :func:`save_bundle`; returns (train, test)."""
    with open(os.path.join(bundle_dir, "meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    train, test = load_csv(
        os.path.join(bundle_dir, "graph.json"),
        os.path.join(bundle_dir, "features.csv"),
        os.path.join(bundle_dir, "labels.csv"),
        n_train=meta["n_train"],
        n_classes=meta.get("classes"),
    )
    return train, test


def _parse_csv(path, n_columns=None):
    """Parse a numeric CSV with a header row; errors cite the 1-based line."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CsvFormatError(path, 1, "missing header row")
    header = lines[0].split(",")
    if n_columns is not None and len(header) != n_columns:
        raise CsvFormatError(path, 1, f"expected {n_columns} columns, got {len(header)}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise CsvFormatError(path, lineno,
                                 f"expected {len(header)} cells, got {len(cells)}")
        try:
            rows.append([float(cell) for cell in cells])
        except ValueError:
            raise CsvFormatError(path, lineno, f"non-numeric cell in {cells!r}") from None
    return np.asarray(rows, dtype=np.float64), len(header)


def load_csv(graph_file, features_csv, labels_csv, train_fraction=0.75,
             n_train=None, n_classes=None):
    """Load a labeled graph dataset from its three files.

    Feature rows are node-major (N*V rows, C columns); label rows match.
    The split takes the leading fraction of graph observations as training
    data unless an explicit ``n_train`` is given.
    """
    graph = load_graph(graph_file)
    v = graph.num_nodes
    feats, c = _parse_csv(features_csv)
    labels, label_cols = _parse_csv(labels_csv)
    if label_cols != 1:
        raise CsvFormatError(labels_csv, 1, "labels must have exactly one column")
    if feats.shape[0] % v != 0:
        raise CsvFormatError(features_csv, feats.shape[0] + 1,
                             f"row count {feats.shape[0]} is not a multiple of V={v}")
    if labels.shape[0] != feats.shape[0]:
        raise CsvFormatError(labels_csv, labels.shape[0] + 1,
                             f"label rows {labels.shape[0]} != feature rows {feats.shape[0]}")
    n = feats.shape[0] // v
    x = feats.reshape(n, v, c)
    y_float = labels.reshape(n, v)
    y = y_float.astype(np.int64)
    if np.any(y != y_float):
        bad = int(np.argwhere(y.reshape(-1) != y_float.reshape(-1))[0][0])
        raise CsvFormatError(labels_csv, bad + 2, "label is not an integer")
    if n_classes is None:
        n_classes = int(y.max()) + 1 if y.size else 1
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        bad = int(np.argwhere((y.reshape(-1) < 0) | (y.reshape(-1) >= n_classes))[0][0])
        raise CsvFormatError(labels_csv, bad + 2,
                             f"label out of range 0..{n_classes - 1}")
    if n_train is None:
        n_train = int(train_fraction * n)
    full = LabeledDataset(x, y, graph, n_classes=n_classes)
    return full.subset(slice(0, n_train)), full.subset(slice(n_train, n))
