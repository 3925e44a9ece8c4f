"""Adjoint correctness of every tape primitive against finite differences."""

import numpy as np
import pytest

from iflow.errors import NonScalarRoot, ShapeMismatch, SingularJacobian
from iflow.tape import NumpyEngine, Tape

from conftest import central_diff, rel_err

TRIALS = 100


def grad_of(build, x):
    """Tape gradient of scalar build(tape, param_node) at x."""
    t = Tape()
    p = t.param(x)
    root = build(t, p)
    t.backward(root)
    return p.adjoint


def check_primitive(build, x, tol=1e-4):
    g_tape = grad_of(build, x)

    def f(arr):
        t = Tape()
        return float(build(t, t.param(arr)).value)

    g_fd = central_diff(f, x)
    assert rel_err(g_tape, g_fd) <= tol


def random_shape(rng):
    return tuple(int(rng.integers(1, 5)) for _ in range(int(rng.integers(1, 4))))


def test_primitive_adjoints_randomized():
    """Every primitive's adjoint matches central differences over 100 trials."""
    rng = np.random.default_rng(7)
    scalarize = lambda t, node: t.reduce_sum(node) if node.value.shape != () else node

    for trial in range(TRIALS):
        kind = trial % 10
        if kind == 0:
            a = rng.standard_normal(random_shape(rng))
            check_primitive(lambda t, p: scalarize(t, t.scale(p, 1.7)), a)
        elif kind == 1:
            shape = random_shape(rng)
            a = rng.standard_normal(shape)
            b = rng.standard_normal(shape)
            check_primitive(
                lambda t, p: scalarize(t, t.add(p, t.hadamard(p, t.const(b)))), a)
        elif kind == 2:
            m, k, n2 = (int(rng.integers(1, 5)) for _ in range(3))
            a = rng.standard_normal((m, k))
            b = rng.standard_normal((k, n2))
            check_primitive(
                lambda t, p: scalarize(t, t.matmul(p, t.const(b))), a)
            check_primitive(
                lambda t, p: scalarize(t, t.matmul(t.const(a), p)), b)
        elif kind == 3:
            a = rng.standard_normal((int(rng.integers(1, 4)), int(rng.integers(1, 4))))
            b = rng.standard_normal((int(rng.integers(1, 4)), int(rng.integers(1, 4))))
            check_primitive(lambda t, p: scalarize(t, t.kron(p, t.const(b))), a)
            check_primitive(lambda t, p: scalarize(t, t.kron(t.const(a), p)), b)
        elif kind == 4:
            a = rng.standard_normal(int(rng.integers(1, 6)))
            check_primitive(
                lambda t, p: t.sum_sq(t.diag_embed(p)), a)
        elif kind == 5:
            a = rng.standard_normal((2, 3, 2))
            check_primitive(lambda t, p: t.sum_sq(t.reshape(p, (3, 4))), a)
            check_primitive(lambda t, p: t.sum_sq(t.slice(p, (slice(None), 1))), a)
        elif kind == 6:
            a = rng.standard_normal(random_shape(rng)) * 2.0
            check_primitive(lambda t, p: t.reduce_sum(t.elu(p)), a)
            check_primitive(lambda t, p: t.reduce_sum(t.elu_prime(p)), a)
        elif kind == 7:
            a = rng.standard_normal((3, 4))
            check_primitive(lambda t, p: t.reduce_sum(t.exp(t.scale(p, 0.3))), a)
            b = rng.uniform(0.5, 3.0, (2, 3))
            check_primitive(lambda t, p: t.reduce_sum(t.log(p)), b)
        elif kind == 8:
            a = rng.standard_normal((2, 4))
            w = rng.standard_normal(4)
            check_primitive(
                lambda t, p: t.reduce_sum(
                    t.hadamard(t.log_softmax(p), t.const(np.outer([1, -1], w)))), a)
        else:
            n2 = int(rng.integers(2, 5))
            a = rng.standard_normal((n2, n2)) + 3.0 * np.eye(n2)
            check_primitive(lambda t, p: t.logabsdet(p)[0], a)
            b = rng.standard_normal((2, 3))
            check_primitive(lambda t, p: t.sum_sq(t.transpose(p), axis=None), b)


def test_add_identity():
    t = Tape()
    out = t.add(t.const(np.eye(2)), t.const(np.zeros((2, 2))))
    np.testing.assert_array_equal(out.value, np.eye(2))


def test_matmul_identity():
    t = Tape()
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = t.matmul(t.const(a), t.const(np.eye(2)))
    np.testing.assert_array_equal(out.value, a)


def test_kron_row_major_vec_identity():
    """vec(S X Theta) == kron(S, Theta^T) vec(X), bitwise on integer matrices."""
    rng = np.random.default_rng(3)
    for _ in range(20):
        v, ci, co = rng.integers(1, 5, 3)
        s = rng.integers(-3, 4, (v, v)).astype(float)
        x = rng.integers(-3, 4, (v, ci)).astype(float)
        theta = rng.integers(-3, 4, (ci, co)).astype(float)
        left = (s @ x @ theta).reshape(-1)
        right = np.kron(s, theta.T) @ x.reshape(-1)
        assert np.array_equal(left, right)


def test_kron_node_swap():
    """kron(swap, I) applied to vec(X) swaps node rows of X."""
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    x = np.arange(4.0).reshape(2, 2)
    out = (np.kron(swap, np.eye(2)) @ x.reshape(-1)).reshape(2, 2)
    np.testing.assert_array_equal(out, x[::-1])
    np.testing.assert_array_equal(out, swap @ x @ np.eye(2))


def test_elu_left_limit_convention_at_zero():
    t = Tape()
    p = t.param(np.array([0.0]))
    d = t.elu_prime(p)
    assert d.value[0] == 1.0
    t.backward(t.reduce_sum(d))
    assert p.adjoint[0] == 1.0  # phi''(0) = e^0 on the negative branch


def test_backward_quadratic():
    t = Tape()
    w = t.param(np.array([1.0, 2.0]))
    t.backward(t.sum_sq(w))
    np.testing.assert_allclose(w.adjoint, [2.0, 4.0])


def test_backward_logabsdet_diagonal():
    t = Tape()
    w = t.param(np.diag([2.0, 3.0]))
    node, sign = t.logabsdet(w)
    assert sign == 1.0
    np.testing.assert_allclose(node.value, np.log(6.0))
    t.backward(node)
    np.testing.assert_allclose(w.adjoint, np.diag([0.5, 1.0 / 3.0]), atol=1e-12)


def test_backward_requires_scalar_root():
    t = Tape()
    p = t.param(np.ones(3))
    with pytest.raises(NonScalarRoot):
        t.backward(p)


def test_unused_parameter_gets_zero_adjoint():
    t = Tape()
    used = t.param(np.ones(2))
    unused = t.param(np.ones(3))
    t.backward(t.sum_sq(used))
    np.testing.assert_array_equal(unused.adjoint, np.zeros(3))
    assert np.all(np.isfinite(used.adjoint))


def test_logabsdet_singular_raises():
    t = Tape()
    with pytest.raises(SingularJacobian):
        t.logabsdet(t.const(np.zeros((3, 3))))


def test_shape_mismatch_names_primitive():
    t = Tape()
    with pytest.raises(ShapeMismatch) as err:
        t.matmul(t.const(np.ones((2, 3))), t.const(np.ones((2, 3))))
    assert "matmul" in str(err.value)
    assert "(2, 3)" in str(err.value)


def test_batched_matmul_broadcast_adjoints():
    """2-D x 3-D and 3-D x 2-D fast paths agree with finite differences."""
    rng = np.random.default_rng(11)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((5, 4, 2))

    def build(t, p):
        return t.sum_sq(t.matmul(p, t.const(b)))

    check = grad_of(build, a)
    g_fd = central_diff(lambda arr: float(
        ((arr @ b) ** 2).sum()), a)
    assert rel_err(check, g_fd) <= 1e-6

    def build_b(t, p):
        return t.sum_sq(t.matmul(t.const(b), p))

    c = rng.standard_normal((2, 6))
    check_b = grad_of(build_b, c)
    g_fd_b = central_diff(lambda arr: float(((b @ arr) ** 2).sum()), c)
    assert rel_err(check_b, g_fd_b) <= 1e-6


def test_affine_matches_matmul_add():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5, 3, 2))
    w = rng.standard_normal((2, 4))
    b = rng.standard_normal(4)
    t = Tape()
    out = t.affine(t.const(x), t.param(w), t.param(b))
    np.testing.assert_allclose(out.value, x @ w + b, atol=1e-14)

    def build(t, p):
        return t.sum_sq(t.affine(t.const(x), p, t.const(b)))

    g = grad_of(build, w)
    g_fd = central_diff(lambda arr: float(((x @ arr + b) ** 2).sum()), w)
    assert rel_err(g, g_fd) <= 1e-6


def test_numpy_engine_matches_tape_values():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((4, 3))
    for name, args in [
        ("elu", ()), ("elu_prime", ()), ("exp", ()), ("log_softmax", ()),
    ]:
        t = Tape()
        node = getattr(t, name)(t.const(x))
        np.testing.assert_array_equal(node.value, getattr(NumpyEngine, name)(x))
