"""Residual-block layer types: node-wise FC, Chebyshev filters, masked spatial filters.

Every layer maps node features (N, V, c_in) -> (N, V, c_out).  Each kind knows
two things: how to apply itself, and the factor it contributes to the block
Jacobian with respect to the row-major vectorization of its input.  Both are
written against an "engine" (a :class:`~iflow.tape.Tape` or plain numpy
backend) so the differentiated path and the fast inference path cannot drift
apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["NodeFC", "Cheb", "L3", "make_layer", "layer_apply", "layer_jacobian"]


@dataclass
class NodeFC:
    """Shared per-node affine map: X -> X W + 1 b^T."""

    weight: np.ndarray  # (c_in, c_out)
    bias: np.ndarray    # (c_out,)

    kind = "node_fc"

    @property
    def in_channels(self):
        return self.weight.shape[0]

    @property
    def out_channels(self):
        return self.weight.shape[1]

    def params(self):
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class Cheb:
    """Spectral filter: X -> sum_k T_k(L~) X Theta_k + 1 b^T."""

    theta: np.ndarray   # (order + 1, c_in, c_out)
    bias: np.ndarray

    kind = "cheb"

    @property
    def order(self):
        return self.theta.shape[0] - 1

    @property
    def in_channels(self):
        return self.theta.shape[1]

    @property
    def out_channels(self):
        return self.theta.shape[2]

    def params(self):
        return {"theta": self.theta, "bias": self.bias}


@dataclass
class L3:
    """Spatial filter with learnable hop-masked mixing matrices.

    X -> sum_r (B_r o M_{d_r}) X Theta_r + 1 b^T, where M_{d_r} is the 0/1
    reachability mask of hop order d_r.  Off-mask entries of B_r are zero at
    all times.
    """

    orders: tuple       # hop orders (d_1, ..., d_R)
    spatial: np.ndarray  # (R, V, V)
    channel: np.ndarray  # (R, c_in, c_out)
    bias: np.ndarray

    kind = "l3"

    @property
    def in_channels(self):
        return self.channel.shape[1]

    @property
    def out_channels(self):
        return self.channel.shape[2]

    def params(self):
        return {"spatial": self.spatial, "channel": self.channel, "bias": self.bias}

    def apply_masks(self, masks):
        """Project off-mask entries of the spatial matrices back to zero."""
        for r, order in enumerate(self.orders):
            self.spatial[r] *= masks[order]


# ---------------------------------------------------------------------- #
# initialization

def make_layer(kind, c_in, c_out, rng, num_nodes=1, order=None, orders=None,
               init_scale=0.01):
    """Create a layer with near-identity initialization.

    Weights draw from N(0, init_scale / fan_in) so that freshly built blocks
    move inputs very little; biases start at zero.
    """
    if kind == "node_fc":
        std = np.sqrt(init_scale / c_in)
        return NodeFC(weight=rng.normal(0.0, std, (c_in, c_out)),
                      bias=np.zeros(c_out))
    if kind == "cheb":
        if order is None:
            raise ValueError("cheb layer requires an order")
        std = np.sqrt(init_scale / (c_in * (order + 1)))
        return Cheb(theta=rng.normal(0.0, std, (order + 1, c_in, c_out)),
                    bias=np.zeros(c_out))
    if kind == "l3":
        if not orders:
            raise ValueError("l3 layer requires hop orders")
        r = len(orders)
        # the residual scale lives in the spatial factor; channel mixing is
        # O(1) so gradients reach the spatial matrices from the start
        spatial_std = np.sqrt(init_scale / num_nodes)
        channel_std = np.sqrt(1.0 / (c_in * r))
        return L3(orders=tuple(int(d) for d in orders),
                  spatial=rng.normal(0.0, spatial_std, (r, num_nodes, num_nodes)),
                  channel=rng.normal(0.0, channel_std, (r, c_in, c_out)),
                  bias=np.zeros(c_out))
    raise ValueError(f"unknown layer kind '{kind}'")


# ---------------------------------------------------------------------- #
# engine-generic application and Jacobian factors
#
# `bound` is a dict of engine values for the layer's parameters plus the
# graph operators it needs (Chebyshev basis / hop masks / identity).

def layer_apply(engine, layer, bound, x):
    """Apply a layer to x (N, V, c_in) under the given engine."""
    if layer.kind == "node_fc":
        return engine.affine(x, bound["weight"], bound["bias"])
    if layer.kind == "cheb":
        total = None
        for k in range(layer.order + 1):
            theta_k = engine.slice(bound["theta"], k)
            term = engine.matmul(bound["basis"][k], engine.matmul(x, theta_k))
            total = term if total is None else engine.add(total, term)
        return engine.add(total, bound["bias"])
    if layer.kind == "l3":
        total = None
        for r in range(len(layer.orders)):
            mixing = engine.hadamard(engine.slice(bound["spatial"], r),
                                     bound["masks"][r])
            term = engine.matmul(mixing, engine.matmul(x, engine.slice(bound["channel"], r)))
            total = term if total is None else engine.add(total, term)
        return engine.add(total, bound["bias"])
    raise ValueError(f"unknown layer kind '{layer.kind}'")


def layer_jacobian(engine, layer, bound):
    """Jacobian factor (V c_out, V c_in) of the layer w.r.t. vec(X), row-major."""
    if layer.kind == "node_fc":
        return engine.kron(bound["eye_v"], engine.transpose(bound["weight"]))
    if layer.kind == "cheb":
        total = None
        for k in range(layer.order + 1):
            theta_k = engine.slice(bound["theta"], k)
            term = engine.kron(bound["basis"][k], engine.transpose(theta_k))
            total = term if total is None else engine.add(total, term)
        return total
    if layer.kind == "l3":
        total = None
        for r in range(len(layer.orders)):
            mixing = engine.hadamard(engine.slice(bound["spatial"], r),
                                     bound["masks"][r])
            term = engine.kron(mixing, engine.transpose(engine.slice(bound["channel"], r)))
            total = term if total is None else engine.add(total, term)
        return total
    raise ValueError(f"unknown layer kind '{layer.kind}'")


def layer_jacobian_t(engine, layer, bound):
    """Transposed Jacobian factor (V c_in, V c_out).

    kron transposes factor-wise, so the transposed factor is assembled
    directly (Chebyshev operators are symmetric); the block pass chains
    transposed factors to keep every product a stacked GEMM, and
    log|det J^T| = log|det J|.
    """
    if layer.kind == "node_fc":
        return engine.kron(bound["eye_v"], bound["weight"])
    if layer.kind == "cheb":
        total = None
        for k in range(layer.order + 1):
            term = engine.kron(bound["basis"][k], engine.slice(bound["theta"], k))
            total = term if total is None else engine.add(total, term)
        return total
    if layer.kind == "l3":
        total = None
        for r in range(len(layer.orders)):
            mixing = engine.hadamard(engine.slice(bound["spatial"], r),
                                     bound["masks"][r])
            term = engine.kron(engine.transpose(mixing),
                               engine.slice(bound["channel"], r))
            total = term if total is None else engine.add(total, term)
        return total
    raise ValueError(f"unknown layer kind '{layer.kind}'")
