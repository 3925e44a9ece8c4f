"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tape` records every primitive as an :class:`ADNode` in creation
order, which is automatically a topological order.  ``backward`` walks the
record once in reverse, accumulating vector-Jacobian products into each
node's ``adjoint``.  Values may carry leading batch axes; primitives treat
the trailing one or two axes as the matrix axes and broadcast over the rest.
"""

from __future__ import annotations

import numpy as np

from .errors import NonScalarRoot, ShapeMismatch, SingularJacobian

__all__ = ["ADNode", "Tape", "NumpyEngine"]

_LOG_DET_FLOOR = -690.0  # log(1e-300); below this a matrix counts as singular


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _mm(a, b):
    """Matrix product over trailing axes (np.matmul broadcast semantics)."""
    if a.ndim == 2 and b.ndim == 2:
        return a @ b
    if b.ndim == 2:
        # stacked left operand: one flat GEMM beats a batched loop
        lead = a.shape[:-1]
        return (a.reshape(-1, a.shape[-1]) @ b).reshape(*lead, b.shape[-1])
    return np.matmul(a, b)


def _collapse_batch(g, other):
    """sum over batch and trailing axis: out[p, q] = sum_nd g[n,p,d] other[n,q,d]."""
    n, p, d = g.shape
    q = other.shape[1]
    gm = np.moveaxis(g, 1, 2).reshape(n * d, p)
    om = np.moveaxis(other, 1, 2).reshape(n * d, q)
    return gm.T @ om


def _swap(a):
    return np.swapaxes(a, -1, -2)


def _elu_parts(x):
    """(phi(x), phi'(x), phi''(x)) sharing one exp evaluation.

    exp(min(x, 0)) equals phi' everywhere; x = 0 takes the negative branch,
    so phi'(0) = 1 and phi''(0) = 1 (left-limit convention).
    """
    prime = np.exp(np.minimum(x, 0.0))
    pos = x > 0.0
    value = np.where(pos, x, prime - 1.0)
    second = np.where(pos, 0.0, prime)
    return value, prime, second


def _elu(x):
    return _elu_parts(x)[0]


def _elu_prime(x):
    return _elu_parts(x)[1]


def _softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class ADNode:
    """One recorded primitive: its value, parents, and adjoint slot."""

    __slots__ = ("op", "value", "adjoint", "parents", "vjp", "is_param", "index")

    def __init__(self, op, value, parents=(), vjp=None, is_param=False, index=-1):
        self.op = op
        self.value = value
        self.adjoint = None
        self.parents = parents
        self.vjp = vjp
        self.is_param = is_param
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, grad, own=False):
        """Add a vjp contribution; ``own=True`` marks freshly allocated,
        writable buffers that may be adopted without a defensive copy."""
        if self.adjoint is None:
            self.adjoint = grad if own else np.array(grad, dtype=np.float64)
        else:
            self.adjoint += grad

    def __repr__(self):
        return f"ADNode({self.op}, shape={self.value.shape}, param={self.is_param})"


class Tape:
    """Ordered record of primitives supporting one reverse sweep per root."""

    def __init__(self):
        self.nodes: list[ADNode] = []

    # ------------------------------------------------------------------ #
    # node creation

    def _register(self, op, value, parents=(), vjp=None, is_param=False):
        node = ADNode(op, value, parents, vjp, is_param, index=len(self.nodes))
        self.nodes.append(node)
        return node

    def const(self, x):
        """Leaf that receives no adjoint of interest (data, graph operators)."""
        return self._register("const", _as_array(x))

    def param(self, x):
        """Leaf marked as a trainable parameter; backward fills its adjoint."""
        return self._register("param", _as_array(x), is_param=True)

    # ------------------------------------------------------------------ #
    # arithmetic primitives

    def add(self, a, b):
        av, bv = a.value, b.value
        try:
            value = av + bv
        except ValueError:
            raise ShapeMismatch("add", av.shape, bv.shape) from None

        def vjp(g):
            a.accumulate(_unbroadcast(g, av.shape), own=g.shape != av.shape)
            b.accumulate(_unbroadcast(g, bv.shape), own=g.shape != bv.shape)

        return self._register("add", value, (a, b), vjp)

    def sub(self, a, b):
        return self.add(a, self.scale(b, -1.0))

    def scale(self, a, c):
        c = float(c)

        def vjp(g):
            a.accumulate(c * g, own=True)

        return self._register("scale", c * a.value, (a,), vjp)

    def hadamard(self, a, b):
        av, bv = a.value, b.value
        try:
            value = av * bv
        except ValueError:
            raise ShapeMismatch("hadamard", av.shape, bv.shape) from None

        def vjp(g):
            a.accumulate(_unbroadcast(g * bv, av.shape), own=True)
            b.accumulate(_unbroadcast(g * av, bv.shape), own=True)

        return self._register("hadamard", value, (a, b), vjp)

    def matmul(self, a, b):
        av, bv = a.value, b.value
        if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
            raise ShapeMismatch("matmul", av.shape, bv.shape)
        value = _mm(av, bv)

        def vjp(g):
            if av.ndim == 2 and bv.ndim == 3:
                # dA sums the batch axis; single-GEMM collapse
                a.accumulate(_collapse_batch(g, bv), own=True)
                b.accumulate(_mm(av.T, g), own=True)
            elif av.ndim == 3 and bv.ndim == 2:
                a.accumulate(_mm(g, bv.T), own=True)
                b.accumulate(
                    _mm(av.reshape(-1, av.shape[-1]).T, g.reshape(-1, g.shape[-1])),
                    own=True,
                )
            else:
                a.accumulate(_unbroadcast(_mm(g, _swap(bv)), av.shape), own=True)
                b.accumulate(_unbroadcast(_mm(_swap(av), g), bv.shape), own=True)

        return self._register("matmul", value, (a, b), vjp)

    def transpose(self, a):
        if a.value.ndim < 2:
            raise ShapeMismatch("transpose", a.value.shape)

        def vjp(g):
            a.accumulate(_swap(g))

        return self._register("transpose", _swap(a.value), (a,), vjp)

    def affine(self, x, w, b):
        """Fused x @ w + b (b broadcast over leading axes)."""
        xv, wv, bv = x.value, w.value, b.value
        if xv.shape[-1] != wv.shape[0] or wv.shape[1] != bv.shape[-1]:
            raise ShapeMismatch("affine", xv.shape, wv.shape, bv.shape)
        value = _mm(xv, wv)
        value += bv

        def vjp(g):
            x.accumulate(_mm(g, wv.T), own=True)
            gf = g.reshape(-1, g.shape[-1])
            w.accumulate(xv.reshape(-1, xv.shape[-1]).T @ gf, own=True)
            b.accumulate(gf.sum(axis=0), own=True)

        return self._register("affine", value, (x, w, b), vjp)

    def kron(self, a, b):
        """Kronecker product of 2-D matrices.

        Row-major vec contract: vec(S X Theta) = kron(S, Theta^T) vec(X).
        """
        av, bv = a.value, b.value
        if av.ndim != 2 or bv.ndim != 2:
            raise ShapeMismatch("kron", av.shape, bv.shape)
        (m, n), (p, q) = av.shape, bv.shape

        def vjp(g):
            g4 = g.reshape(m, p, n, q)
            a.accumulate(np.einsum("ipjq,pq->ij", g4, bv), own=True)
            b.accumulate(np.einsum("ipjq,ij->pq", g4, av), own=True)

        return self._register("kron", np.kron(av, bv), (a, b), vjp)

    def diag_embed(self, v):
        """(..., n) -> (..., n, n) with v on the diagonal."""
        vv = v.value
        n = vv.shape[-1]
        value = np.zeros(vv.shape + (n,), dtype=np.float64)
        idx = np.arange(n)
        value[..., idx, idx] = vv

        def vjp(g):
            v.accumulate(g[..., idx, idx], own=True)

        return self._register("diag_embed", value, (v,), vjp)

    def reshape(self, a, shape):
        old = a.value.shape

        def vjp(g):
            a.accumulate(g.reshape(old))

        return self._register("reshape", a.value.reshape(shape), (a,), vjp)

    def slice(self, a, key):
        """Basic slicing/indexing; adjoint scatter-adds into the source shape."""
        value = a.value[key]

        def vjp(g):
            full = np.zeros_like(a.value)
            np.add.at(full, key, g)
            a.accumulate(full, own=True)

        return self._register("slice", np.array(value), (a,), vjp)

    # ------------------------------------------------------------------ #
    # reductions

    def reduce_sum(self, a, axis=None):
        value = a.value.sum(axis=axis)
        shape = a.value.shape

        def vjp(g):
            if axis is None:
                a.accumulate(np.broadcast_to(g, shape))
            else:
                a.accumulate(np.broadcast_to(np.expand_dims(g, axis), shape))

        return self._register("reduce_sum", value, (a,), vjp)

    def sum_sq(self, a, axis=None):
        value = (a.value ** 2).sum(axis=axis)
        shape = a.value.shape

        def vjp(g):
            if axis is None:
                a.accumulate(2.0 * a.value * g, own=True)
            else:
                a.accumulate(2.0 * a.value * np.expand_dims(g, axis), own=True)

        return self._register("sum_sq", value, (a,), vjp)

    # ------------------------------------------------------------------ #
    # elementwise nonlinearities

    def elu_pair(self, a):
        """(elu(a), elu'(a)) sharing one exp; the hot path for activations."""
        value, prime, second = _elu_parts(a.value)

        def act_vjp(g):
            a.accumulate(g * prime, own=True)

        act = self._register("elu", value, (a,), act_vjp)

        def deriv_vjp(g):
            a.accumulate(g * second, own=True)

        deriv = self._register("elu_prime", prime, (a,), deriv_vjp)
        return act, deriv

    def elu(self, a):
        return self.elu_pair(a)[0]

    def elu_prime(self, a):
        """phi' as a first-class primitive so Jacobian diagonals stay differentiable."""
        return self.elu_pair(a)[1]

    def exp(self, a):
        value = np.exp(a.value)

        def vjp(g):
            a.accumulate(g * value, own=True)

        return self._register("exp", value, (a,), vjp)

    def log(self, a):
        av = a.value

        def vjp(g):
            a.accumulate(g / av, own=True)

        return self._register("log", np.log(av), (a,), vjp)

    def log_softmax(self, a):
        """Row-wise log softmax over the last axis."""
        av = a.value
        shifted = av - av.max(axis=-1, keepdims=True)
        value = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        soft = np.exp(value)

        def vjp(g):
            a.accumulate(g - soft * g.sum(axis=-1, keepdims=True), own=True)

        return self._register("log_softmax", value, (a,), vjp)

    # ------------------------------------------------------------------ #
    # determinants

    def logabsdet(self, a):
        """log|det A| over the trailing two axes.  Returns (node, sign array).

        The registered adjoint is the transposed inverse of A.
        """
        av = a.value
        if av.ndim < 2 or av.shape[-1] != av.shape[-2]:
            raise ShapeMismatch("logabsdet", av.shape)
        sign, value = np.linalg.slogdet(av)
        if np.any(sign == 0) or np.any(value < _LOG_DET_FLOOR) or not np.all(
            np.isfinite(value)
        ):
            raise SingularJacobian()

        def vjp(g):
            inv_t = _swap(np.linalg.inv(av))
            a.accumulate(np.asarray(g)[..., None, None] * inv_t, own=True)

        node = self._register("logabsdet", value, (a,), vjp)
        return node, sign

    # ------------------------------------------------------------------ #
    # backward sweep

    def backward(self, root):
        """Populate adjoints of every node contributing to scalar ``root``."""
        if root.value.shape != ():
            raise NonScalarRoot(
                f"backward root must be scalar, got shape {root.value.shape}"
            )
        for node in self.nodes:
            node.adjoint = None
        root.adjoint = np.ones(())
        for node in reversed(self.nodes[: root.index + 1]):
            if node.adjoint is None or node.vjp is None:
                continue
            node.vjp(node.adjoint)
        # parameters not reached by the sweep have exactly zero gradient
        for node in self.nodes:
            if node.is_param and node.adjoint is None:
                node.adjoint = np.zeros_like(node.value)
        return root.adjoint


class NumpyEngine:
    """Tape-less twin of :class:`Tape`: same method surface, raw arrays.

    Model code written against an engine runs identically under the tape
    (for gradients) and under this class (for fast inference), so the two
    paths cannot drift apart.
    """

    @staticmethod
    def const(x):
        return _as_array(x)

    param = const

    @staticmethod
    def add(a, b):
        try:
            return a + b
        except ValueError:
            raise ShapeMismatch("add", a.shape, b.shape) from None

    @staticmethod
    def sub(a, b):
        return a - b

    @staticmethod
    def scale(a, c):
        return float(c) * a

    @staticmethod
    def hadamard(a, b):
        try:
            return a * b
        except ValueError:
            raise ShapeMismatch("hadamard", a.shape, b.shape) from None

    @staticmethod
    def matmul(a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeMismatch("matmul", a.shape, b.shape)
        return _mm(a, b)

    @staticmethod
    def transpose(a):
        return _swap(a)

    @staticmethod
    def kron(a, b):
        return np.kron(a, b)

    @staticmethod
    def diag_embed(v):
        n = v.shape[-1]
        out = np.zeros(v.shape + (n,), dtype=np.float64)
        idx = np.arange(n)
        out[..., idx, idx] = v
        return out

    @staticmethod
    def reshape(a, shape):
        return a.reshape(shape)

    @staticmethod
    def slice(a, key):
        return a[key]

    @staticmethod
    def reduce_sum(a, axis=None):
        return a.sum(axis=axis)

    @staticmethod
    def sum_sq(a, axis=None):
        return (a ** 2).sum(axis=axis)

    @staticmethod
    def elu(a):
        return _elu(a)

    @staticmethod
    def elu_prime(a):
        return _elu_prime(a)

    @staticmethod
    def elu_pair(a):
        value, prime, _second = _elu_parts(a)
        return value, prime

    @staticmethod
    def affine(x, w, b):
        out = _mm(x, w)
        out += b
        return out

    @staticmethod
    def exp(a):
        return np.exp(a)

    @staticmethod
    def log(a):
        return np.log(a)

    @staticmethod
    def log_softmax(a):
        shifted = a - a.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    @staticmethod
    def logabsdet(a):
        sign, value = np.linalg.slogdet(a)
        if np.any(sign == 0) or np.any(value < _LOG_DET_FLOOR) or not np.all(
            np.isfinite(value)
        ):
            raise SingularJacobian()
        return value, sign
