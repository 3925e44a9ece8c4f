"""Closed-form Ornstein-Uhlenbeck transport oracle and particle simulators.

For a zero-mean Gaussian start N(0, Sigma), the OU process dX = -X dt +
sqrt(2) dW has covariance Sigma_t = (1 - e^{-2t}) I + e^{-2t} Sigma at time
t, and the deterministic flow dx/dt = f(x, t) with force
f(x, t) = -(I - Sigma_t^{-1}) x transports the density identically.  This
module provides the closed forms, an RK4 particle integrator for the flow,
an Euler-Maruyama simulator for the SDE, spectral and locality-based series
expressions for Sigma_t^{-1}, and the permutation-symmetry probe for graph
filters versus covariances.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import EigenbasisError, RegimeError
from .graphs import cheb_basis, hop_masks
from .linalg import eig_sym, solve, spectral_norm

__all__ = [
    "OUSpec",
    "FlowTrace",
    "sigma_t",
    "force",
    "ode_transport",
    "sde_simulate",
    "spectral_sigma_t_inv",
    "corollary_gap",
    "local_series_inverse",
    "permutation_gap",
    "write_trace_csv",
    "write_covariances_json",
]


@dataclass(frozen=True)
class OUSpec:
    """Initial Gaussian covariance for the transport problem."""

    sigma0: np.ndarray

    def __post_init__(self):
        sigma0 = np.asarray(self.sigma0, dtype=np.float64)
        object.__setattr__(self, "sigma0", sigma0)
        w, _ = eig_sym(sigma0)
        if w.min() <= 0:
            raise ValueError(f"initial covariance must be SPD (min eig {w.min():.3e})")

    @property
    def dim(self):
        return self.sigma0.shape[0]


@dataclass
class FlowTrace:
    """Particle snapshots along the transport."""

    times: np.ndarray         # (T,), strictly increasing
    positions: np.ndarray     # (T, n, d)
    covariances: np.ndarray   # (T, d, d) empirical covariance per snapshot

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must increase strictly")


def sigma_t(sigma, t):
    """Time-evolved covariance (1 - e^{-2t}) I + e^{-2t} Sigma."""
    sigma = np.asarray(sigma, dtype=np.float64)
    decay = np.exp(-2.0 * t)
    return (1.0 - decay) * np.eye(sigma.shape[0]) + decay * sigma


def force(x, t, sigma, eig=None):
    """Transport force -(I - Sigma_t^{-1}) x; x may be a batch (n, d).

    Pass ``eig = eig_sym(sigma)`` to amortize the diagonalization across
    many evaluations (the integrators do).
    """
    x = np.asarray(x, dtype=np.float64)
    if eig is None:
        eig = eig_sym(sigma)
    w, u = eig
    decay = np.exp(-2.0 * t)
    evals_t = (1.0 - decay) + decay * w
    proj = x @ u
    return -x + (proj / evals_t) @ u.T


def _snapshot_times(t_final, dt, max_snapshots=21):
    n_steps = int(round(t_final / dt))
    stride = max(1, n_steps // (max_snapshots - 1))
    idx = list(range(0, n_steps + 1, stride))
    if idx[-1] != n_steps:
        idx.append(n_steps)
    return n_steps, idx


def _empirical_cov(x):
    centered = x - x.mean(axis=0, keepdims=True)
    return centered.T @ centered / (len(x) - 1)


def ode_transport(spec, n_particles, t_final, dt=0.01, rng=None, max_snapshots=21):
    """Integrate particles under the deterministic transport flow with RK4."""
    if dt <= 0 or t_final <= 0:
        raise ValueError("dt and t_final must be positive")
    if rng is None:
        rng = np.random.default_rng()
    eig = eig_sym(spec.sigma0)
    chol = np.linalg.cholesky(spec.sigma0)
    x = rng.standard_normal((n_particles, spec.dim)) @ chol.T
    n_steps, snap_idx = _snapshot_times(t_final, dt, max_snapshots)
    snaps, times = [x.copy()], [0.0]
    t = 0.0
    for step in range(1, n_steps + 1):
        k1 = force(x, t, spec.sigma0, eig)
        k2 = force(x + 0.5 * dt * k1, t + 0.5 * dt, spec.sigma0, eig)
        k3 = force(x + 0.5 * dt * k2, t + 0.5 * dt, spec.sigma0, eig)
        k4 = force(x + dt * k3, t + dt, spec.sigma0, eig)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = step * dt
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite particle position at t={t:.4f}")
        if step in snap_idx:
            snaps.append(x.copy())
            times.append(t)
    positions = np.stack(snaps)
    covs = np.stack([_empirical_cov(p) for p in positions])
    return FlowTrace(times=np.asarray(times), positions=positions, covariances=covs)


def sde_simulate(spec, n_particles, t_final, dt=0.005, rng=None, max_snapshots=21):
    """Euler-Maruyama simulation of dX = -X dt + sqrt(2) dW from N(0, Sigma)."""
    if dt <= 0 or t_final <= 0:
        raise ValueError("dt and t_final must be positive")
    if rng is None:
        rng = np.random.default_rng()
    chol = np.linalg.cholesky(spec.sigma0)
    x = rng.standard_normal((n_particles, spec.dim)) @ chol.T
    n_steps, snap_idx = _snapshot_times(t_final, dt, max_snapshots)
    snaps, times = [x.copy()], [0.0]
    root = np.sqrt(2.0 * dt)
    for step in range(1, n_steps + 1):
        x = x - x * dt + root * rng.standard_normal(x.shape)
        if step in snap_idx:
            snaps.append(x.copy())
            times.append(step * dt)
    positions = np.stack(snaps)
    covs = np.stack([_empirical_cov(p) for p in positions])
    return FlowTrace(times=np.asarray(times), positions=positions, covariances=covs)


# ---------------------------------------------------------------------- #
# spectral route

def spectral_sigma_t_inv(graph, coeffs, t, basis="chebyshev"):
    """Sigma_t^{-1} for Sigma given as a polynomial of the graph Laplacian.

    With Sigma = P(L) sharing eigenvectors U of L, the inverse evolves
    eigenvalue-wise: sum_i ((1 - e^{-2t}) + e^{-2t} P(lambda_i))^{-1} U_i U_i^T.
    ``basis`` selects how the coefficients are read: "chebyshev" evaluates a
    Chebyshev series on the scaled Laplacian, "monomial" a power series on
    the raw Laplacian.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if basis == "chebyshev":
        operator = graph.laplacian_scaled
        poly = np.polynomial.chebyshev.Chebyshev(coeffs)
    elif basis == "monomial":
        operator = graph.laplacian
        poly = np.polynomial.polynomial.Polynomial(coeffs)
    else:
        raise ValueError(f"unknown basis '{basis}'")
    w, u = eig_sym(operator)
    p_vals = poly(w)
    if p_vals.min() <= 0:
        raise ValueError("polynomial is not positive on the spectrum")
    decay = np.exp(-2.0 * t)
    evolved = (1.0 - decay) + decay * p_vals
    return (u / evolved) @ u.T


def corollary_gap(sigma, p_tilde, operator, t):
    """Spectral-norm gap between exact and polynomial-surrogate Sigma_t^{-1}.

    ``p_tilde`` maps eigenvalues of ``operator`` to surrogate eigenvalues of
    Sigma.  Requires Sigma and the operator to share eigenvectors (commutator
    checked) and min p_tilde > 0.  Returns (lhs, rhs) where
    lhs = rho(Sigma_t^{-1} - Sigma~_t^{-1}) and rhs is the explicit bound
    (1 - c_t) delta / ((c_t + (1-c_t) lam_min(Sigma)) (c_t + (1-c_t) min p~))
    with c_t = 1 - e^{-2t} and delta the largest eigenvalue mismatch.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    operator = np.asarray(operator, dtype=np.float64)
    comm = sigma @ operator - operator @ sigma
    scale = max(1.0, np.abs(sigma).max() * np.abs(operator).max())
    if np.abs(comm).max() > 1e-8 * scale:
        raise EigenbasisError(
            f"matrices do not commute (commutator max {np.abs(comm).max():.3e})"
        )
    w_op, u = eig_sym(operator)
    lam_sigma = np.diagonal(u.T @ sigma @ u).copy()
    p_vals = np.asarray(p_tilde(w_op), dtype=np.float64)
    if p_vals.min() <= 0:
        raise ValueError("p_tilde must be positive on the spectrum")
    delta = float(np.abs(lam_sigma - p_vals).max())
    c_t = 1.0 - np.exp(-2.0 * t)
    evolved_true = c_t + (1.0 - c_t) * lam_sigma
    evolved_sur = c_t + (1.0 - c_t) * p_vals
    diff = (u / evolved_true) @ u.T - (u / evolved_sur) @ u.T
    lhs = spectral_norm(diff)
    rhs = abs((1.0 - c_t) * delta
              / ((c_t + (1.0 - c_t) * lam_sigma.min())
                 * (c_t + (1.0 - c_t) * p_vals.min())))
    return lhs, rhs


# ---------------------------------------------------------------------- #
# locality route

def _hop_locality(matrix, graph, tol=1e-12):
    """Smallest v with support(matrix) inside the v-hop mask."""
    support = np.abs(matrix) > tol
    for v in range(graph.num_nodes):
        mask = hop_masks(graph, [v])[0].matrix > 0
        if np.all(mask | ~support):
            return v
    raise ValueError("matrix couples nodes in different graph components")


def local_series_inverse(sigma, t, k, graph):
    """Truncated power-series approximation of Sigma_t^{-1} plus diagnostics.

    Long-time branch (requires rho(c Sigma) < 1 with c = e^{-2t}/(1-e^{-2t})):
        Sigma_t^{-1} ~= (1 - e^{-2t})^{-1} sum_{p=0}^{k} (-1)^p (c Sigma)^p.
    Short-time branch (requires rho(Sigma^{-1}/c) < 1):
        Sigma_t^{-1} ~= e^{2t} sum_{p=0}^{k-1} (-1)^p c^{-p} Sigma^{-(p+1)}.
    Returns (approximation, hop-locality order of the truncation, spectral
    error against the exact inverse).
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    decay = np.exp(-2.0 * t)
    c = decay / (1.0 - decay)
    long_radius = spectral_norm(c * sigma)
    sigma_inv = solve(sigma, np.eye(sigma.shape[0]))
    short_radius = spectral_norm(sigma_inv / c)
    if long_radius < 1.0:
        total = np.zeros_like(sigma)
        power = np.eye(sigma.shape[0])
        for p in range(k + 1):
            total += (-1.0) ** p * power
            power = power @ (c * sigma)
        approx = total / (1.0 - decay)
    elif short_radius < 1.0:
        if k < 1:
            raise ValueError("short-time branch needs k >= 1")
        total = np.zeros_like(sigma)
        power = sigma_inv.copy()
        for p in range(k):
            total += (-1.0) ** p * (c ** -p) * power
            power = power @ sigma_inv
        approx = total / decay
    else:
        raise RegimeError(long_radius, short_radius)
    exact = solve(sigma_t(sigma, t), np.eye(sigma.shape[0]))
    err = spectral_norm(approx - exact)
    return approx, _hop_locality(approx, graph), err


# ---------------------------------------------------------------------- #
# permutation probe

def permutation_gap(graph, sigma, perm, tol=1e-12):
    """(filter symmetry, covariance symmetry) under a node permutation.

    filter side: pi f pi^T == f for f in {A, A^2, T_0, T_1, T_2 of the scaled
    Laplacian}; covariance side: pi Sigma pi^T == Sigma.
    """
    perm = np.asarray(perm, dtype=np.float64)
    a = graph.adjacency
    filters = [a, a @ a] + cheb_basis(graph, 2)
    filter_sym = all(np.abs(perm @ f @ perm.T - f).max() <= tol for f in filters)
    sigma = np.asarray(sigma, dtype=np.float64)
    sigma_sym = bool(np.abs(perm @ sigma @ perm.T - sigma).max() <= tol)
    return filter_sym, sigma_sym


# ---------------------------------------------------------------------- #
# trace persistence

def write_trace_csv(trace, path):
    """Particle trajectories as long-form CSV (t, particle, coordinates)."""
    d = trace.positions.shape[2]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "particle"] + [f"x{j}" for j in range(d)])
        for t, frame in zip(trace.times, trace.positions):
            for pid, row in enumerate(frame):
                writer.writerow([repr(float(t)), pid] + [repr(float(v)) for v in row])


def write_covariances_json(trace, path):
    doc = {
        "times": [float(t) for t in trace.times],
        "covariances": [c.tolist() for c in trace.covariances],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
