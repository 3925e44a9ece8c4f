"""Invertible residual flow: blocks, exact Jacobians, inversion, persistence.

A :class:`FlowModel` is a stack of residual blocks x -> x + g(x) over node
features, a conditional Gaussian head (per-class latent means), and a linear
classifier.  The forward pass produces the transported features, the exact
log-determinant of the composite Jacobian (assembled per block from
Kronecker-structured layer factors and activation diagonals), and the
movement penalty sum_b ||g_b||^2 / 2.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import NonConvergent
from .graphs import GraphSpec, build_graph, cheb_basis, graph_from_json, graph_to_json, hop_masks
from .layers import Cheb, L3, NodeFC, layer_apply, layer_jacobian_t, make_layer
from .tape import ADNode, NumpyEngine, Tape

__all__ = ["FlowModel", "build_flow_model", "save_model", "load_model"]

MODEL_FORMAT_VERSION = 1


def _val(x):
    return x.value if isinstance(x, ADNode) else x


class FlowModel:
    """Residual flow with conditional Gaussian head and linear classifier."""

    def __init__(self, graph, channels, classes, blocks, w_g, b_g, sigma2, w_c, b_c):
        if sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if not blocks:
            raise ValueError("a flow needs at least one residual block")
        self.graph = graph
        self.channels = int(channels)
        self.classes = int(classes)
        self.blocks = blocks                      # list[list[layer]]
        self.w_g = np.asarray(w_g, dtype=np.float64)   # (C, K)
        self.b_g = np.asarray(b_g, dtype=np.float64)   # (C,)
        self.sigma2 = float(sigma2)
        self.w_c = np.asarray(w_c, dtype=np.float64)   # (K, C)
        self.b_c = np.asarray(b_c, dtype=np.float64)   # (K,)
        self._check_blocks()
        self._cache_graph_operators()

    # ------------------------------------------------------------------ #
    # construction helpers

    def _check_blocks(self):
        c = self.channels
        for b, layers in enumerate(self.blocks):
            if layers[0].in_channels != c or layers[-1].out_channels != c:
                raise ValueError(f"block {b} does not map {c} channels to itself")
            for prev, nxt in zip(layers, layers[1:]):
                if prev.out_channels != nxt.in_channels:
                    raise ValueError(f"block {b}: channel bookkeeping does not close")

    def _cache_graph_operators(self):
        max_cheb = -1
        l3_orders = set()
        for layers in self.blocks:
            for layer in layers:
                if layer.kind == "cheb":
                    max_cheb = max(max_cheb, layer.order)
                elif layer.kind == "l3":
                    l3_orders.update(layer.orders)
        self._cheb = cheb_basis(self.graph, max_cheb) if max_cheb >= 0 else []
        if l3_orders:
            masks = hop_masks(self.graph, sorted(l3_orders))
            self._masks = {m.order: m.matrix for m in masks}
        else:
            self._masks = {}
        self._eye_v = np.eye(self.graph.num_nodes)
        self._eye_d = np.eye(self.graph.num_nodes * self.channels)

    @property
    def num_blocks(self):
        return len(self.blocks)

    @property
    def dim(self):
        return self.graph.num_nodes * self.channels

    def parameters(self):
        """Deterministically ordered [(name, array)] of every trainable."""
        out = []
        for b, layers in enumerate(self.blocks):
            for i, layer in enumerate(layers):
                for key, arr in layer.params().items():
                    out.append((f"block{b}.layer{i}.{key}", arr))
        out.extend([("head.w_g", self.w_g), ("head.b_g", self.b_g),
                    ("classifier.w_c", self.w_c), ("classifier.b_c", self.b_c)])
        return out

    def apply_l3_masks(self):
        """Re-project spatial matrices onto their hop masks (post-optimizer step)."""
        for layers in self.blocks:
            for layer in layers:
                if layer.kind == "l3":
                    layer.apply_masks(self._masks)

    def class_means(self):
        """Latent mean per class, shape (K, C)."""
        return self.w_g.T + self.b_g[None, :]

    # ------------------------------------------------------------------ #
    # engine binding

    def bind(self, engine):
        """Register every parameter and graph operator with the engine.

        Returns a structure the flow pass consumes: per-block per-layer dicts
        plus head/classifier entries.  With a Tape engine the dict values are
        tape nodes; with NumpyEngine they are the raw arrays.
        """
        bound_blocks = []
        for layers in self.blocks:
            bound_layers = []
            for layer in layers:
                bound = {k: engine.param(v) for k, v in layer.params().items()}
                if layer.kind == "node_fc":
                    bound["eye_v"] = engine.const(self._eye_v)
                elif layer.kind == "cheb":
                    bound["basis"] = [engine.const(self._cheb[k])
                                      for k in range(layer.order + 1)]
                elif layer.kind == "l3":
                    bound["masks"] = [engine.const(self._masks[d]) for d in layer.orders]
                bound_layers.append(bound)
            bound_blocks.append(bound_layers)
        return {
            "blocks": bound_blocks,
            "w_g": engine.param(self.w_g),
            "b_g": engine.param(self.b_g),
            "w_c": engine.param(self.w_c),
            "b_c": engine.param(self.b_c),
            "eye_d": engine.const(self._eye_d),
        }

    def param_nodes(self, bound):
        """Flatten a tape binding back into [(name, node)], matching parameters()."""
        out = []
        for b, layers in enumerate(self.blocks):
            for i, layer in enumerate(layers):
                for key in layer.params():
                    out.append((f"block{b}.layer{i}.{key}", bound["blocks"][b][i][key]))
        out.extend([("head.w_g", bound["w_g"]), ("head.b_g", bound["b_g"]),
                    ("classifier.w_c", bound["w_c"]), ("classifier.b_c", bound["b_c"])])
        return out

    # ------------------------------------------------------------------ #
    # forward transport

    def _block_pass(self, engine, bound_layers, layers, x, want_jacobian=True):
        """One residual block under an engine.

        Returns (y, g, jac_t) where jac_t is the TRANSPOSED block Jacobian
        (I + J_g)^T, shaped (D, D) for purely linear blocks and (N, D, D)
        otherwise.  Chaining transposed factors keeps every product a
        stacked GEMM; determinants are unaffected.
        """
        n = _val(x).shape[0]
        v = self.graph.num_nodes
        h = x
        jac_t = None
        for i, (layer, bound) in enumerate(zip(layers, bound_layers)):
            if want_jacobian and i > 0:
                dvec = engine.reshape(deriv, (n, 1, v * layer.in_channels))
                jac_t = engine.hadamard(jac_t, dvec)
            pre = layer_apply(engine, layer, bound, h)
            if want_jacobian:
                factor_t = layer_jacobian_t(engine, layer, bound)
                jac_t = factor_t if i == 0 else engine.matmul(jac_t, factor_t)
            if i < len(layers) - 1:
                if want_jacobian:
                    h, deriv = engine.elu_pair(pre)
                else:
                    h = engine.elu(pre)
            else:
                h = pre
        g = h
        y = engine.add(x, g)
        if want_jacobian:
            jac_t = engine.add(engine.const(self._eye_d), jac_t)
        return y, g, jac_t

    def flow_pass(self, engine, bound, x, want_jacobian=True, collect_blocks=False):
        """Push a batch through every block.

        Returns (z, logdet, movement) and, when requested, the per-block
        Jacobians.  logdet / movement are per-sample (N,) except that fully
        linear stacks yield scalar logdet shared by the whole batch.
        """
        logdet = None
        movement = None
        jacobians = []
        h = x
        for layers, bound_layers in zip(self.blocks, bound["blocks"]):
            y, g, jac_t = self._block_pass(engine, bound_layers, layers, h,
                                           want_jacobian=want_jacobian)
            if want_jacobian:
                ld, _sign = engine.logabsdet(jac_t)
                logdet = ld if logdet is None else engine.add(logdet, ld)
                if collect_blocks:
                    jacobians.append(engine.transpose(jac_t))
            move = engine.scale(engine.sum_sq(g, axis=(-1, -2)), 0.5)
            movement = move if movement is None else engine.add(movement, move)
            h = y
        if collect_blocks:
            return h, logdet, movement, jacobians
        return h, logdet, movement

    def forward(self, x, want_jacobian=True):
        """Transport x; returns (z, logdet, movement) as numpy arrays.

        Accepts (V, C) for a single observation or (N, V, C) for a batch;
        logdet and movement follow the input batching.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 2
        if single:
            x = x[None]
        engine = NumpyEngine()
        bound = self.bind(engine)
        z, logdet, movement = self.flow_pass(engine, bound, x,
                                             want_jacobian=want_jacobian)
        if want_jacobian:
            logdet = np.broadcast_to(logdet, (x.shape[0],)).copy()
        else:
            logdet = None
        if single:
            return z[0], (logdet[0] if logdet is not None else None), movement[0]
        return z, logdet, movement

    def block_forward(self, block_index, x):
        """Diagnostic single-block pass: returns (x + g(x), block Jacobian)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 2
        if single:
            x = x[None]
        engine = NumpyEngine()
        bound = self.bind(engine)
        y, _g, jac_t = self._block_pass(engine, bound["blocks"][block_index],
                                        self.blocks[block_index], x)
        jac = np.swapaxes(jac_t, -1, -2)
        if single:
            y = y[0]
            if jac.ndim == 3:
                jac = jac[0]
        return y, jac

    def residual(self, block_index, x):
        """g_b(x) without the skip connection (used by fixed-point inversion)."""
        engine = NumpyEngine()
        bound = self.bind(engine)
        _y, g, _ = self._block_pass(engine, bound["blocks"][block_index],
                                    self.blocks[block_index], x,
                                    want_jacobian=False)
        return g

    # ------------------------------------------------------------------ #
    # inversion

    def inverse(self, z, tol=1e-8, max_iter=200, damped=False, return_mask=False):
        """Invert the flow by per-block fixed-point iteration, last block first.

        Iterates x <- y - g_b(x) from x0 = y until the sup-norm update falls
        below tol.  ``damped=True`` uses the averaged update
        x <- x + (y - g_b(x) - x) / 2 for residuals at the edge of
        contractivity.  Raises :class:`NonConvergent` unless
        ``return_mask=True``, in which case a per-sample success mask is
        returned alongside the result.
        """
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 2
        if single:
            z = z[None]
        engine = NumpyEngine()
        bound = self.bind(engine)
        x = z.copy()
        ok = np.ones(z.shape[0], dtype=bool)
        for b in range(self.num_blocks - 1, -1, -1):
            y = x
            x = y.copy()
            layers = self.blocks[b]
            bound_layers = bound["blocks"][b]
            converged = False
            for _ in range(max_iter):
                _yy, g, _ = self._block_pass(engine, bound_layers, layers, x,
                                             want_jacobian=False)
                x_next = y - g if not damped else 0.5 * (x + y - g)
                delta = np.abs(x_next - x).max(axis=(1, 2))
                x = x_next
                if delta.max() < tol:
                    converged = True
                    break
            if not converged:
                bad = np.flatnonzero(delta >= tol)
                if not return_mask:
                    raise NonConvergent(block=b, residual=float(delta.max()),
                                        sample_indices=bad.tolist())
                ok[bad] = False
        if single:
            return (x[0], ok[0]) if return_mask else x[0]
        return (x, ok) if return_mask else x


# ---------------------------------------------------------------------- #
# builder

def build_flow_model(graph, channels, classes, layer_specs, num_blocks,
                     sigma2=0.1, head_separation=3.0, seed=0, init_scale=0.01):
    """Assemble a FlowModel from per-block layer specs.

    ``layer_specs`` is a list of dicts, one per layer inside each block:
    {"kind": "node_fc" | "cheb" | "l3", "width": int (output channels,
    defaulted to the data channels for the last layer), "order": int (cheb),
    "orders": [int] (l3)}.  Latent class means start on a separated lattice
    along the first coordinate; the classifier starts at uniform logits.
    """
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(num_blocks):
        layers = []
        c_in = channels
        for j, spec in enumerate(layer_specs):
            last = j == len(layer_specs) - 1
            c_out = channels if last else int(spec.get("width", channels))
            layers.append(make_layer(
                spec["kind"], c_in, c_out, rng,
                num_nodes=graph.num_nodes,
                order=spec.get("order"),
                orders=spec.get("orders"),
                init_scale=init_scale,
            ))
            c_in = c_out
        blocks.append(layers)
    w_g = np.zeros((channels, classes))
    w_g[0, :] = head_separation * np.sqrt(sigma2) * np.arange(classes)
    model = FlowModel(
        graph=graph, channels=channels, classes=classes, blocks=blocks,
        w_g=w_g, b_g=np.zeros(channels), sigma2=sigma2,
        w_c=np.zeros((classes, channels)), b_c=np.zeros(classes),
    )
    model.apply_l3_masks()
    return model


# ---------------------------------------------------------------------- #
# persistence (JSON; float round-trip is exact, so reloads are bitwise)

def _layer_to_json(layer):
    if layer.kind == "node_fc":
        return {"kind": "node_fc", "orders": None,
                "weights": [layer.weight.tolist()], "bias": layer.bias.tolist()}
    if layer.kind == "cheb":
        return {"kind": "cheb", "orders": layer.order,
                "weights": [w.tolist() for w in layer.theta],
                "bias": layer.bias.tolist()}
    return {"kind": "l3", "orders": list(layer.orders),
            "weights": [w.tolist() for w in layer.channel],
            "spatial": [s.tolist() for s in layer.spatial],
            "bias": layer.bias.tolist()}


def _layer_from_json(doc):
    bias = np.asarray(doc["bias"], dtype=np.float64)
    if doc["kind"] == "node_fc":
        return NodeFC(weight=np.asarray(doc["weights"][0], dtype=np.float64), bias=bias)
    if doc["kind"] == "cheb":
        return Cheb(theta=np.asarray(doc["weights"], dtype=np.float64), bias=bias)
    return L3(orders=tuple(doc["orders"]),
              spatial=np.asarray(doc["spatial"], dtype=np.float64),
              channel=np.asarray(doc["weights"], dtype=np.float64),
              bias=bias)


def model_to_json(model):
    return {
        "version": MODEL_FORMAT_VERSION,
        "graph": graph_to_json(model.graph),
        "channels": model.channels,
        "classes": model.classes,
        "sigma2": model.sigma2,
        "blocks": [{"layers": [_layer_to_json(l) for l in layers]}
                   for layers in model.blocks],
        "head": {"W_g": model.w_g.tolist(), "b_g": model.b_g.tolist()},
        "classifier": {"W_c": model.w_c.tolist(), "b_c": model.b_c.tolist()},
    }


def model_from_json(doc):
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')}")
    graph = graph_from_json(doc["graph"])
    blocks = [[_layer_from_json(l) for l in blk["layers"]] for blk in doc["blocks"]]
    return FlowModel(
        graph=graph, channels=doc["channels"], classes=doc["classes"],
        blocks=blocks,
        w_g=np.asarray(doc["head"]["W_g"], dtype=np.float64),
        b_g=np.asarray(doc["head"]["b_g"], dtype=np.float64),
        sigma2=doc["sigma2"],
        w_c=np.asarray(doc["classifier"]["W_c"], dtype=np.float64),
        b_c=np.asarray(doc["classifier"]["b_c"], dtype=np.float64),
    )


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(model), fh)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_json(json.load(fh))
