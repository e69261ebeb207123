"""Federated training over digital twins.

Local gradient descent on each twin's data, data-size-weighted
aggregation at the BS level, then global aggregation at the MBS.
Two desk-scale model families: multinomial logistic regression and a
one-hidden-layer dense network, both on flat float64 parameter vectors
with analytic gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from dtwn.latency import local_iteration_count


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _one_hot(y, k):
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), y] = 1.0
    return out


class LogisticRegression:
    """Multinomial logistic regression with cross-entropy loss."""

    def __init__(self, num_features, num_classes, l2=0.0):
        self.num_features = num_features
        self.num_classes = num_classes
        self.l2 = l2
        self.dim = (num_features + 1) * num_classes

    def init_params(self, rng=None):
        return np.zeros(self.dim)

    def _unpack(self, w):
        d, k = self.num_features, self.num_classes
        W = w[: d * k].reshape(d, k)
        b = w[d * k:]
        return W, b

    def _probs(self, w, X):
        W, b = self._unpack(w)
        return _softmax(X @ W + b)

    def predict(self, w, X):
        return self._probs(w, X).argmax(axis=1)

    def loss(self, w, X, y):
        p = self._probs(w, X)
        nll = -np.log(np.clip(p[np.arange(len(y)), y], 1e-300, None)).mean()
        return float(nll + 0.5 * self.l2 * w @ w)

    def loss_and_grad(self, w, X, y):
        W, b = self._unpack(w)
        p = _softmax(X @ W + b)
        nll = -np.log(np.clip(p[np.arange(len(y)), y], 1e-300, None)).mean()
        delta = (p - _one_hot(y, self.num_classes)) / len(y)
        gW = X.T @ delta
        gb = delta.sum(axis=0)
        grad = np.concatenate([gW.ravel(), gb]) + self.l2 * w
        return float(nll + 0.5 * self.l2 * w @ w), grad


class DenseNet:
    """One-hidden-layer tanh network with softmax cross-entropy loss."""

    def __init__(self, num_features, num_classes, hidden=16, l2=0.0):
        self.num_features = num_features
        self.num_classes = num_classes
        self.hidden = hidden
        self.l2 = l2
        self.dim = (num_features + 1) * hidden + (hidden + 1) * num_classes

    def init_params(self, rng=None):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        d, h, k = self.num_features, self.hidden, self.num_classes
        w = np.zeros(self.dim)
        w[: d * h] = rng.normal(0, 1.0 / math.sqrt(d), d * h)
        start = d * h + h
        w[start: start + h * k] = rng.normal(0, 1.0 / math.sqrt(h), h * k)
        return w

    def _unpack(self, w):
        d, h, k = self.num_features, self.hidden, self.num_classes
        i = 0
        W1 = w[i: i + d * h].reshape(d, h); i += d * h
        b1 = w[i: i + h]; i += h
        W2 = w[i: i + h * k].reshape(h, k); i += h * k
        b2 = w[i: i + k]
        return W1, b1, W2, b2

    def _forward(self, w, X):
        W1, b1, W2, b2 = self._unpack(w)
        a = np.tanh(X @ W1 + b1)
        return a, _softmax(a @ W2 + b2)

    def predict(self, w, X):
        return self._forward(w, X)[1].argmax(axis=1)

    def loss(self, w, X, y):
        _, p = self._forward(w, X)
        nll = -np.log(np.clip(p[np.arange(len(y)), y], 1e-300, None)).mean()
        return float(nll + 0.5 * self.l2 * w @ w)

    def loss_and_grad(self, w, X, y):
        W1, b1, W2, b2 = self._unpack(w)
        a = np.tanh(X @ W1 + b1)
        p = _softmax(a @ W2 + b2)
        nll = -np.log(np.clip(p[np.arange(len(y)), y], 1e-300, None)).mean()
        delta2 = (p - _one_hot(y, self.num_classes)) / len(y)
        gW2 = a.T @ delta2
        gb2 = delta2.sum(axis=0)
        delta1 = (delta2 @ W2.T) * (1.0 - a * a)
        gW1 = X.T @ delta1
        gb1 = delta1.sum(axis=0)
        grad = np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2]) + self.l2 * w
        return float(nll + 0.5 * self.l2 * w @ w), grad


def make_model(kind, num_features, num_classes, **kw):
    if kind == "logistic":
        return LogisticRegression(num_features, num_classes, **kw)
    if kind == "dense":
        return DenseNet(num_features, num_classes, **kw)
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass
class TrainingTask:
    model: object
    learning_rate: float = 0.5
    theta_local: float = 0.5
    seed: int = 0
    aggregation_mode: str = "normalized"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")

    @property
    def local_iters(self):
        return local_iteration_count(self.theta_local)


@dataclass
class GradientDiag:
    grad_norm_ratio: float = math.nan
    lipschitz_estimate: float = math.nan


def local_loss(w, model, X, y):
    """Mean per-sample loss on one twin's data."""
    if len(X) == 0:
        raise ValueError("empty dataset")
    return model.loss(w, X, y)


def local_train(twin, w0, task, batch_frac):
    """Mini-batch gradient descent on the twin's data.

    Uses ceil(batch_frac * D) samples per step, drawn without replacement
    within an epoch; the sampling stream is seeded per (task, twin).
    """
    X, y = twin.features, twin.labels
    if X is None or len(X) == 0:
        raise ValueError(f"twin {twin.id} has no data")
    model = task.model
    d = len(X)
    bsz = max(1, math.ceil(batch_frac * d))
    rng = np.random.default_rng((task.seed, twin.id))
    w = np.asarray(w0, dtype=float).copy()
    order = rng.permutation(d)
    cursor = 0
    g_prev = None
    g_last = None
    for _ in range(task.local_iters):
        if cursor + bsz > d:
            order = rng.permutation(d)
            cursor = 0
        idx = order[cursor: cursor + bsz]
        cursor += bsz
        loss, grad = model.loss_and_grad(w, X[idx], y[idx])
        if not math.isfinite(loss):
            raise FloatingPointError(f"divergence on twin {twin.id}: loss={loss}")
        w = w - task.learning_rate * grad
        g_prev, g_last = g_last, grad
    ratio = math.nan
    if g_prev is not None:
        denom = np.linalg.norm(g_prev)
        if denom > 0:
            ratio = float(np.linalg.norm(g_last) / denom)
    return w, GradientDiag(grad_norm_ratio=ratio)


def bs_aggregate(models, mode="normalized"):
    """Aggregate (params, data_size) pairs at one BS.

    normalized: data-size-weighted mean. literal: (1/K) * sum(D_j w_j),
    kept only for formula-conformance tests.
    """
    if not models:
        raise ValueError("nothing to aggregate")
    ws = [np.asarray(w, dtype=float) for w, _ in models]
    sizes = np.array([float(d) for _, d in models])
    if len({w.shape for w in ws}) != 1:
        raise ValueError("parameter dimension mismatch")
    stacked = np.stack(ws)
    if mode == "normalized":
        if sizes.sum() == 0:
            raise ValueError("all data sizes are zero")
        return (sizes[:, None] * stacked).sum(axis=0) / sizes.sum()
    if mode == "literal":
        return (sizes[:, None] * stacked).sum(axis=0) / len(models)
    raise ValueError(f"unknown aggregation mode {mode!r}")


def global_aggregate(bs_models, mode="normalized"):
    """Aggregate per-BS models at the MBS.

    ``bs_models`` is a list of (params, weight). normalized weighs each BS
    model by its total associated data, so two-level aggregation equals one
    flat weighted mean over twins; literal ignores weights and takes
    the plain mean.
    """
    if not bs_models:
        raise ValueError("nothing to aggregate")
    ws = [np.asarray(w, dtype=float) for w, _ in bs_models]
    if len({w.shape for w in ws}) != 1:
        raise ValueError("parameter dimension mismatch")
    stacked = np.stack(ws)
    if mode == "normalized":
        weights = np.array([float(d) for _, d in bs_models])
        if weights.sum() == 0:
            raise ValueError("all weights are zero")
        return (weights[:, None] * stacked).sum(axis=0) / weights.sum()
    if mode == "literal":
        return stacked.mean(axis=0)
    raise ValueError(f"unknown aggregation mode {mode!r}")


def global_loss(w, twins, model):
    """Mean over twins of each twin's mean per-sample loss."""
    losses = [local_loss(w, model, t.features, t.labels)
              for t in twins if t.data_size > 0]
    if not losses:
        raise ValueError("no twin has data")
    return float(np.mean(losses))


def federated_round(w, twins, assoc, task, batch_fracs=None):
    """One round: distribute, train locally, aggregate twice, evaluate.

    Returns (new params, global loss at the new params, diag of the last
    twin trained). ``batch_fracs`` defaults to full batch.
    """
    n = len(twins)
    if batch_fracs is None:
        batch_fracs = np.ones(n)
    mode = task.aggregation_mode
    diag = GradientDiag()
    bs_models = []
    for bs in range(assoc.num_bs):
        members = assoc.twins_of(bs)
        local = []
        for j in members:
            wj, diag = local_train(twins[j], w, task, batch_fracs[j])
            local.append((wj, twins[j].data_size))
        if local:
            agg = bs_aggregate(local, mode=mode)
            bs_models.append((agg, sum(d for _, d in local)))
    if not bs_models:
        raise ValueError("no BS holds any twin")
    w_new = global_aggregate(bs_models, mode=mode)
    loss = global_loss(w_new, twins, task.model)
    return w_new, loss, diag


def estimate_smoothness(trajectory):
    """Gradient-Lipschitz estimate over a (w_t, grad_t) trajectory."""
    if len(trajectory) < 2:
        raise ValueError("need at least two trajectory points")
    best = 0.0
    ratio = math.nan
    used = 0
    for (w0, g0), (w1, g1) in zip(trajectory, trajectory[1:]):
        dw = np.linalg.norm(np.asarray(w1) - np.asarray(w0))
        if dw == 0:
            continue
        used += 1
        best = max(best, float(np.linalg.norm(np.asarray(g1) - np.asarray(g0)) / dw))
        n0 = np.linalg.norm(g0)
        ratio = float(np.linalg.norm(g1) / n0) if n0 > 0 else math.inf
    if used == 0:
        raise ValueError("all consecutive trajectory points coincide")
    return GradientDiag(grad_norm_ratio=ratio, lipschitz_estimate=best)


def make_synthetic_classification(n_samples, num_features=8, num_classes=2,
                                  separation=2.0, seed=0):
    """Gaussian-cluster classification data, one cluster per class."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 1, (num_classes, num_features))
    centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)
    y = rng.integers(0, num_classes, n_samples)
    X = centers[y] + rng.normal(0, 1.0, (n_samples, num_features))
    return X, y


def partition_iid(X, y, n_twins, seed=0):
    """Shuffle and split evenly into per-twin (features, labels) shards."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(X))
    shards = np.array_split(order, n_twins)
    return [(X[s], y[s]) for s in shards]


def save_dataset(path, X, y):
    """Delimited text: one row per sample, last column the integer label."""
    data = np.column_stack([X, y.astype(float)])
    np.savetxt(path, data, delimiter=",", fmt="%.17g")


def load_dataset(path):
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return data[:, :-1], data[:, -1].astype(int)
