"""Dense linear algebra helpers: LU, log-determinants, symmetric eigen, solves.

Everything here operates on plain float64 numpy arrays.  LAPACK (via
numpy/scipy) does the factorizations; this module owns the contracts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, ShapeMismatch, SingularJacobian

__all__ = [
    "LUFactor",
    "lu_factor",
    "logabsdet",
    "eig_sym",
    "solve",
    "spectral_norm",
]

_SYM_TOL = 1e-10


@dataclass(frozen=True)
class LUFactor:
    """Compact LU factorization: P A = L U with partial pivoting."""

    lu: np.ndarray      # L (unit lower, below diagonal) and U packed together
    piv: np.ndarray     # LAPACK-style row-swap indices
    sign: float         # parity of the pivot permutation (+1 or -1)

    def unpack(self):
        """Return (P, L, U) with P @ A == L @ U."""
        n = self.lu.shape[0]
        lower = np.tril(self.lu, -1) + np.eye(n)
        upper = np.triu(self.lu)
        perm = np.arange(n)
        for i, p in enumerate(self.piv):
            perm[[i, p]] = perm[[p, i]]
        pmat = np.eye(n)[perm]
        return pmat, lower, upper


def lu_factor(a):
    """LU-factor a square matrix, tracking the permutation parity."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch("lu_factor", a.shape)
    lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    sign = 1.0 if np.count_nonzero(piv != np.arange(a.shape[0])) % 2 == 0 else -1.0
    return LUFactor(lu=lu, piv=piv, sign=sign)


def logabsdet(a):
    """Return (log|det A|, sign of det A) via LU with partial pivoting."""
    fac = lu_factor(a)
    diag = np.diagonal(fac.lu)
    if np.any(diag == 0.0):
        raise SingularJacobian()
    value = float(np.log(np.abs(diag)).sum())
    if value < -690.0 or not np.isfinite(value):
        raise SingularJacobian()
    sign = fac.sign * float(np.prod(np.sign(diag)))
    return value, sign


def eig_sym(a, tol=_SYM_TOL):
    """Eigendecomposition of a symmetric matrix, ascending eigenvalues.

    Asymmetry up to ``tol`` (max-abs) is tolerated and symmetrized away.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch("eig_sym", a.shape)
    asym = np.abs(a - a.T).max() if a.size else 0.0
    if asym > tol:
        raise ShapeMismatch("eig_sym(asymmetric)", a.shape)
    w, u = np.linalg.eigh(0.5 * (a + a.T))
    return w, u


def solve(a, b):
    """Solve A X = B for X."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularJacobian(str(exc)) from exc


def spectral_norm(a, tol=1e-10, max_iter=10000):
    """Largest singular value via power iteration on A^T A."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatch("spectral_norm", a.shape)
    if not a.size or not np.any(a):
        return 0.0
    n = a.shape[1]
    rng = np.random.default_rng(0)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        w = a.T @ (a @ v)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
        new_sigma = np.linalg.norm(a @ v)
        if abs(new_sigma - sigma) <= tol * max(1.0, new_sigma):
            return float(new_sigma)
        sigma = new_sigma
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations",
        abs(new_sigma - sigma),
    )
