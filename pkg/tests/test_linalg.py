"""LU, log-determinant, symmetric eigen, solve, and spectral norm contracts."""

import numpy as np
import pytest

from iflow.errors import ShapeMismatch, SingularJacobian
from iflow.linalg import eig_sym, logabsdet, lu_factor, solve, spectral_norm

from conftest import central_diff, rel_err


def random_well_conditioned(rng, n):
    a = rng.standard_normal((n, n))
    return a + n * np.eye(n)


def test_lu_reconstructs():
    rng = np.random.default_rng(0)
    for _ in range(25):
        n = int(rng.integers(2, 8))
        a = random_well_conditioned(rng, n)
        p, lo, up = lu_factor(a).unpack()
        err = np.linalg.norm(p @ a - lo @ up) / np.linalg.norm(a)
        assert err <= 1e-10


def test_lu_parity_sign_matches_det():
    rng = np.random.default_rng(1)
    for _ in range(25):
        n = int(rng.integers(2, 6))
        a = random_well_conditioned(rng, n)
        value, sign = logabsdet(a)
        det = np.linalg.det(a)
        assert sign == np.sign(det)
        np.testing.assert_allclose(value, np.log(abs(det)), rtol=1e-9)


def test_logabsdet_identity_and_diagonal():
    value, sign = logabsdet(np.eye(5))
    assert value == 0.0 and sign == 1.0
    value, sign = logabsdet(np.diag([2.0, 3.0]))
    np.testing.assert_allclose(value, np.log(6.0))
    assert sign == 1.0


def test_logabsdet_product_rule():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        a = random_well_conditioned(rng, n)
        b = random_well_conditioned(rng, n)
        la, _ = logabsdet(a)
        lb, _ = logabsdet(b)
        lab, _ = logabsdet(a @ b)
        assert abs(lab - la - lb) <= 1e-8


def test_logabsdet_singular():
    with pytest.raises(SingularJacobian):
        logabsdet(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_logabsdet_adjoint_vs_finite_difference():
    """Tape adjoint of logabsdet (A^{-T}) against central differences, 1e-5."""
    from iflow.tape import Tape

    rng = np.random.default_rng(3)
    a = random_well_conditioned(rng, 4)
    t = Tape()
    p = t.param(a)
    node, _ = t.logabsdet(p)
    t.backward(node)
    g_fd = central_diff(lambda arr: logabsdet(arr)[0], a)
    assert rel_err(p.adjoint, g_fd) <= 1e-5
    np.testing.assert_allclose(p.adjoint, np.linalg.inv(a).T, atol=1e-10)


def test_eig_sym_identity():
    w, _ = eig_sym(np.eye(3))
    np.testing.assert_allclose(w, np.ones(3))


def test_eig_sym_reconstruction():
    rng = np.random.default_rng(4)
    for _ in range(20):
        n = int(rng.integers(2, 9))
        a = rng.standard_normal((n, n))
        a = 0.5 * (a + a.T)
        w, u = eig_sym(a)
        err = np.linalg.norm(u @ np.diag(w) @ u.T - a)
        assert err <= 1e-8


def test_eig_sym_rejects_asymmetric():
    with pytest.raises(ShapeMismatch):
        eig_sym(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_solve_against_cofactor_inverse():
    """solve(A, I) against the adjugate/determinant formula on random 3x3."""
    rng = np.random.default_rng(5)

    def cofactor_inverse(a):
        det = (a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
               - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
               + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]))
        cof = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                minor = np.delete(np.delete(a, i, axis=0), j, axis=1)
                cof[i, j] = (-1.0) ** (i + j) * np.linalg.det(minor)
        return cof.T / det

    for _ in range(20):
        a = random_well_conditioned(rng, 3)
        x = solve(a, np.eye(3))
        assert np.abs(x - cofactor_inverse(a)).max() <= 1e-9


def test_spectral_norm_diagonal():
    assert spectral_norm(np.diag([3.0, -5.0])) == pytest.approx(5.0, abs=1e-9)


def test_spectral_norm_matches_svd():
    rng = np.random.default_rng(6)
    for _ in range(20):
        a = rng.standard_normal((int(rng.integers(2, 7)), int(rng.integers(2, 7))))
        assert spectral_norm(a) == pytest.approx(np.linalg.svd(a, compute_uv=False)[0],
                                                 rel=1e-8)


def test_spectral_norm_zero():
    assert spectral_norm(np.zeros((3, 3))) == 0.0
