"""Adam training loop with seeded shuffling, loss trace, and early termination."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .condgen import flow_objective, predict
from .errors import TrainingAbort
from .tape import Tape

__all__ = ["TrainConfig", "TraceRow", "TrainResult", "Adam", "train", "write_trace"]


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 256
    mu: float = 0.01                 # classifier weight in the objective
    lambda_w2: float = 1.0           # movement-penalty weight
    max_epochs: int = 100
    termination_rel_decrease: float = 1e-4
    termination_patience: int = 3    # consecutive epochs below the threshold
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "lambda_w2", "mu",
                     "beta1", "beta2", "eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 < self.termination_rel_decrease < 1.0:
            raise ValueError("termination_rel_decrease must lie in (0, 1)")
        if self.termination_patience < 1:
            raise ValueError("termination_patience must be >= 1")


@dataclass
class TraceRow:
    epoch: int
    generative: float
    movement: float
    classifier: float
    total: float
    train_err: float
    test_err: float


@dataclass
class TrainResult:
    model: object
    trace: list = field(default_factory=list)

    @property
    def epochs_run(self):
        return len(self.trace)


class Adam:
    """Adam over a list of (name, array) parameters, updating in place."""

    def __init__(self, params, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(arr) for _, arr in params]
        self.v = [np.zeros_like(arr) for _, arr in params]

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, ((_name, arr), g) in enumerate(zip(self.params, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            arr -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def classification_error(model, x, y):
    """Per-node misclassification rate of the linear read-out."""
    probs = predict(model, x)
    return float((probs.argmax(axis=-1) != np.asarray(y)).mean())


def train(model, dataset, config, test_set=None):
    """Minimize the end-to-end objective over the dataset.

    Per-epoch shuffling and every random draw derive from ``config.seed``,
    so identical configurations reproduce the loss trace exactly.  Training
    stops at ``max_epochs`` or once the relative decrease of the epoch loss
    stays below ``termination_rel_decrease`` for ``termination_patience``
    consecutive epochs (a one-epoch rule misfires on batch-order noise).  A
    non-finite batch loss aborts with the offending epoch and batch.
    """
    if len(dataset.x) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2,
               config.eps)
    trace = []
    prev_loss = None
    stalled = 0
    n = len(dataset.x)
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        sums = np.zeros(4)
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            xb, yb = dataset.x[idx], dataset.y[idx]
            tape = Tape()
            bound = model.bind(tape)
            terms = flow_objective(tape, model, bound, xb, yb,
                                   mu=config.mu, lambda_w2=config.lambda_w2)
            loss = float(terms["total"].value)
            if not np.isfinite(loss):
                raise TrainingAbort(epoch=epoch, batch=batch_index)
            tape.backward(terms["total"])
            grads = [node.adjoint for _name, node in model.param_nodes(bound)]
            opt.step(grads)
            model.apply_l3_masks()
            w = len(idx) / n
            sums += w * np.array([
                float(np.mean(terms["generative"].value)),
                float(np.mean(terms["movement"].value)),
                float(np.mean(terms["classifier"].value)),
                loss,
            ])
        train_err = classification_error(model, dataset.x, dataset.y) \
            if model.classes > 1 else 0.0
        test_err = classification_error(model, test_set.x, test_set.y) \
            if (test_set is not None and model.classes > 1) else float("nan")
        trace.append(TraceRow(epoch=epoch, generative=sums[0], movement=sums[1],
                              classifier=sums[2], total=sums[3],
                              train_err=train_err, test_err=test_err))
        if prev_loss is not None:
            rel_decrease = (prev_loss - sums[3]) / max(abs(prev_loss), 1e-300)
            stalled = stalled + 1 if rel_decrease < config.termination_rel_decrease else 0
            if stalled >= config.termination_patience:
                break
        prev_loss = sums[3]
    return TrainResult(model=model, trace=trace)


def write_trace(trace, path):
    """Loss trace as CSV: epoch, L_g, W2, L_c, total, train_err, test_err."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "L_g", "W2", "L_c", "total",
                         "train_err", "test_err"])
        for row in trace:
            writer.writerow([row.epoch, repr(row.generative), repr(row.movement),
                             repr(row.classifier), repr(row.total),
                             repr(row.train_err), repr(row.test_err)])
