"""Two-sample statistics, weighted reports, correlation, invertibility audit."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ShapeMismatch

__all__ = [
    "mmd",
    "energy_distance",
    "MetricsReport",
    "weighted_report",
    "sample_correlation",
    "invertibility_audit",
    "DEFAULT_ALPHAS",
]

DEFAULT_ALPHAS = (0.1, 1.0, 5.0, 10.0)


def _flatten(samples):
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim > 2:
        samples = samples.reshape(samples.shape[0], -1)
    return samples


def mmd(p, q, alpha, biased=False):
    """Squared maximum mean discrepancy under k(x, y) = exp(-alpha ||x-y||^2).

    The default is the unbiased U-statistic (diagonal terms excluded from the
    within-sample means), which may be slightly negative; ``biased=True``
    gives the V-statistic including diagonals.
    """
    p, q = _flatten(p), _flatten(q)
    if p.shape[1] != q.shape[1]:
        raise ShapeMismatch("mmd", p.shape, q.shape)
    n, m = len(p), len(q)
    if n == 0 or m == 0:
        raise ValueError("mmd needs nonempty samples")
    if not biased and (n < 2 or m < 2):
        raise ValueError("unbiased mmd needs at least two samples per set")
    kpp = np.exp(-alpha * cdist(p, p, "sqeuclidean"))
    kqq = np.exp(-alpha * cdist(q, q, "sqeuclidean"))
    kpq = np.exp(-alpha * cdist(p, q, "sqeuclidean"))
    if biased:
        return float(kpp.mean() + kqq.mean() - 2.0 * kpq.mean())
    within_p = (kpp.sum() - np.trace(kpp)) / (n * (n - 1))
    within_q = (kqq.sum() - np.trace(kqq)) / (m * (m - 1))
    return float(within_p + within_q - 2.0 * kpq.mean())


def energy_distance(p, q):
    """Energy distance 2 E||X-Y|| - E||X-X'|| - E||Y-Y'|| (off-diagonal means)."""
    p, q = _flatten(p), _flatten(q)
    if p.shape[1] != q.shape[1]:
        raise ShapeMismatch("energy_distance", p.shape, q.shape)
    n, m = len(p), len(q)
    if n == 0 or m == 0:
        raise ValueError("energy_distance needs nonempty samples")
    cross = cdist(p, q).mean()
    within_p = 0.0
    if n > 1:
        dpp = cdist(p, p)
        within_p = dpp.sum() / (n * (n - 1))
    within_q = 0.0
    if m > 1:
        dqq = cdist(q, q)
        within_q = dqq.sum() / (m * (m - 1))
    return float(2.0 * cross - within_p - within_q)


@dataclass
class MetricsReport:
    """Per-label-vector two-sample statistics and their weighted aggregate."""

    alphas: tuple
    rows: list = field(default_factory=list)   # one dict per label vector
    weighted: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "alphas": list(self.alphas),
            "per_label": self.rows,
            "weighted": self.weighted,
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    def write_csv(self, path):
        """Table layout: one row per label vector plus the weighted row."""
        cols = [f"mmd_alpha_{a:g}" for a in self.alphas] + ["energy"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["labels", "count"] + cols)
            for row in self.rows:
                writer.writerow([row["labels"], row["count"]]
                                + [repr(row[c]) for c in cols])
            writer.writerow(["weighted", sum(r["count"] for r in self.rows)]
                            + [repr(self.weighted[c]) for c in cols])


def weighted_report(true_by_labels, generated_by_labels, alphas=DEFAULT_ALPHAS):
    """Two-sample battery per label vector, weighted by observation counts.

    Both arguments map a label-vector key (any hashable; tuples of ints are
    conventional) to a sample array.  Weights are the true-sample counts
    normalized over the label vectors present in both mappings.
    """
    keys = [k for k in true_by_labels if k in generated_by_labels]
    if not keys:
        raise ValueError("no label vectors in common")
    rows = []
    counts = np.array([len(true_by_labels[k]) for k in keys], dtype=float)
    weights = counts / counts.sum()
    cols = [f"mmd_alpha_{a:g}" for a in alphas] + ["energy"]
    for key in keys:
        p, q = true_by_labels[key], generated_by_labels[key]
        row = {"labels": _label_key_str(key), "count": int(len(p))}
        for a in alphas:
            row[f"mmd_alpha_{a:g}"] = mmd(p, q, a)
        row["energy"] = energy_distance(p, q)
        rows.append(row)
    weighted = {c: float(sum(w * row[c] for w, row in zip(weights, rows)))
                for c in cols}
    return MetricsReport(alphas=tuple(alphas), rows=rows, weighted=weighted)


def _label_key_str(key):
    if isinstance(key, tuple):
        return ",".join(str(int(v)) for v in key)
    return str(key)


def sample_correlation(samples):
    """Pearson correlation matrix of sample columns (rows are observations)."""
    samples = _flatten(samples)
    centered = samples - samples.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (len(samples) - 1)
    scale = np.sqrt(np.diagonal(cov))
    corr = cov / np.outer(scale, scale)
    np.fill_diagonal(corr, 1.0)
    return corr


def invertibility_audit(model, x_in_dist, x_ood, tol=1e-8, max_iter=200):
    """Max round-trip errors of the flow on given and out-of-distribution inputs.

    Reports sup-norm errors of F^{-1}(F(x)) - x and F(F^{-1}(x)) - x for both
    input sets.  Non-convergence of the fixed-point inversion propagates as
    :class:`~iflow.errors.NonConvergent` rather than being swallowed.
    """

    def roundtrips(x):
        z, _, _ = model.forward(x, want_jacobian=False)
        back = model.inverse(z, tol=tol, max_iter=max_iter)
        fwd_inv = float(np.abs(back - x).max())
        inv = model.inverse(x, tol=tol, max_iter=max_iter)
        again, _, _ = model.forward(inv, want_jacobian=False)
        inv_fwd = float(np.abs(again - x).max())
        return fwd_inv, inv_fwd

    in_fi, in_if = roundtrips(np.asarray(x_in_dist, dtype=np.float64))
    ood_fi, ood_if = roundtrips(np.asarray(x_ood, dtype=np.float64))
    return {
        "in_dist_forward_inverse": in_fi,
        "in_dist_inverse_forward": in_if,
        "ood_forward_inverse": ood_fi,
        "ood_inverse_forward": ood_if,
    }
