"""Conditional generation: exact-likelihood loss, classifier loss, sampling.

The latent target for a node with label y is an isotropic Gaussian
N(mean(y), sigma^2 I_C) with mean(y) = W_g e_y + b_g; node labels index the
same per-class distribution at every node.  The negative log-likelihood of an
observation is the per-node Gaussian energy of the transported features minus
the flow's log-determinant.
"""

from __future__ import annotations

import numpy as np

from .tape import NumpyEngine

__all__ = [
    "one_hot",
    "flow_objective",
    "generative_loss",
    "classifier_loss",
    "total_objective",
    "predict",
    "generate",
]

LOG_2PI = float(np.log(2.0 * np.pi))


def one_hot(y, classes):
    """(N, V) integer labels in 0..K-1 -> (N, V, K) indicator array."""
    y = np.asarray(y)
    if np.any(y < 0) or np.any(y >= classes):
        raise ValueError(f"labels must lie in 0..{classes - 1}")
    out = np.zeros(y.shape + (classes,), dtype=np.float64)
    np.put_along_axis(out, y[..., None], 1.0, axis=-1)
    return out


def flow_objective(engine, model, bound, x, y, mu=0.01, lambda_w2=1.0):
    """Build every loss term for a batch under the given engine.

    x: (N, V, C) features, y: (N, V) labels.  Returns a dict with per-sample
    generative loss, movement, classifier loss, and the scalar batch
    objective mean(L_g + lambda * W2 + mu * L_c).
    """
    n, v, _c = x.shape
    x_node = engine.const(x)
    onehot = engine.const(one_hot(y, model.classes))

    z, logdet, movement = model.flow_pass(engine, bound, x_node)

    # per-node Gaussian energy around the labelled class means
    means = engine.add(engine.matmul(onehot, engine.transpose(bound["w_g"])),
                       bound["b_g"])
    diff = engine.sub(z, means)
    quad = engine.scale(engine.sum_sq(diff, axis=(-1, -2)),
                        1.0 / (2.0 * model.sigma2))
    norm_const = 0.5 * v * model.channels * (LOG_2PI + np.log(model.sigma2))
    gen = engine.sub(engine.add(quad, engine.const(norm_const)), logdet)

    # mean over nodes of cross-entropy under the linear read-out
    logits = engine.add(engine.matmul(z, engine.transpose(bound["w_c"])),
                        bound["b_c"])
    picked = engine.hadamard(engine.log_softmax(logits), onehot)
    clf = engine.scale(engine.reduce_sum(picked, axis=(-1, -2)), -1.0 / v)

    per_sample = engine.add(gen, engine.add(engine.scale(movement, lambda_w2),
                                            engine.scale(clf, mu)))
    total = engine.scale(engine.reduce_sum(per_sample), 1.0 / n)
    return {
        "z": z,
        "logdet": logdet,
        "generative": gen,
        "movement": movement,
        "classifier": clf,
        "total": total,
    }


def _promote(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim == 2:
        x = x[None]
        y = y[None]
    return x, y


def generative_loss(model, x, y):
    """Negative conditional log-likelihood; batch input returns the mean."""
    x, y = _promote(x, y)
    engine = NumpyEngine()
    bound = model.bind(engine)
    terms = flow_objective(engine, model, bound, x, y)
    return float(np.mean(terms["generative"]))


def classifier_loss(model, z, y):
    """Cross-entropy of the linear read-out on already-transported features."""
    z, y = _promote(z, y)
    logits = z @ model.w_c.T + model.b_c
    ls = NumpyEngine.log_softmax(logits)
    picked = np.take_along_axis(ls, np.asarray(y)[..., None], axis=-1)[..., 0]
    return float(-picked.mean())


def total_objective(model, x, y, mu=0.01, lambda_w2=1.0):
    """Batch objective mean(L_g + lambda_w2 * W2 + mu * L_c)."""
    x, y = _promote(x, y)
    engine = NumpyEngine()
    bound = model.bind(engine)
    terms = flow_objective(engine, model, bound, x, y, mu=mu, lambda_w2=lambda_w2)
    return float(terms["total"])


def predict(model, x):
    """Per-node class probabilities softmax(W_c F(x) + b_c)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    z, _, _ = model.forward(x, want_jacobian=False)
    logits = z @ model.w_c.T + model.b_c
    probs = np.exp(NumpyEngine.log_softmax(logits))
    return probs[0] if single else probs


def generate(model, labels, n, rng=None, tol=1e-8, max_iter=200, damped=False,
             return_mask=False):
    """Draw n conditional samples for one node-label vector.

    Samples the latent head N(mean(y_v), sigma^2 I) independently per node
    and applies the inverse flow.  Unknown-at-training-time label vectors are
    fine; only the per-class means matter.
    """
    if rng is None:
        rng = np.random.default_rng()
    labels = np.asarray(labels, dtype=int).reshape(-1)
    if labels.shape[0] != model.graph.num_nodes:
        raise ValueError(
            f"label vector has {labels.shape[0]} entries for "
            f"{model.graph.num_nodes} nodes"
        )
    means = model.class_means()[labels]          # (V, C)
    h = means[None] + np.sqrt(model.sigma2) * rng.standard_normal(
        (n, model.graph.num_nodes, model.channels))
    return model.inverse(h, tol=tol, max_iter=max_iter, damped=damped,
                         return_mask=return_mask)
