"""Dense feedforward regressor for the reduced coefficients.

Plain numpy: Glorot-uniform init, tanh (or relu) hidden layers, linear
output, Adam on mini-batches of the squared-error loss

    L = mean over samples of || net(x) - y ||^2.

Training holds out a random validation fraction and keeps the weights from
the best validation epoch while still running the full epoch budget.
"""

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class MlpParams:
    weights: list            # weights[l] has shape (n_out_l, n_in_l)
    biases: list             # biases[l] has shape (n_out_l,)
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    def copy(self):
        return MlpParams(weights=[W.copy() for W in self.weights],
                         biases=[b.copy() for b in self.biases],
                         activation=self.activation)


def init_mlp(n_hidden_layers, n_neurons, in_dim, out_dim, seed=0,
             activation="tanh"):
    if min(n_hidden_layers, n_neurons, in_dim, out_dim) < 1:
        raise ValueError("all network dimensions must be at least 1")
    sizes = [in_dim] + [n_neurons] * n_hidden_layers + [out_dim]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights=weights, biases=biases, activation=activation)


def _act(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_prime(z, kind):
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return (z > 0.0).astype(float)


def _forward_full(params, X):
    """All pre-activations and activations, for backprop."""
    a = X
    zs, acts = [], [a]
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W.T + b
        zs.append(z)
        a = z if l == last else _act(z, params.activation)
        acts.append(a)
    return zs, acts


def forward(params, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != params.weights[0].shape[1]:
        raise ValueError(f"expected inputs of width {params.weights[0].shape[1]}, "
                         f"got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("network input contains non-finite values")
    _, acts = _forward_full(params, X)
    return acts[-1]


def loss_mse(params, X, Y):
    d = forward(params, X) - Y
    return float(np.mean(np.sum(d * d, axis=1)))


def backward(params, X, Y):
    """Gradient of the batch loss with respect to every weight and bias."""
    B = X.shape[0]
    zs, acts = _forward_full(params, X)
    delta = 2.0 * (acts[-1] - Y) / B
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    for l in range(len(params.weights) - 1, -1, -1):
        grads_w[l] = delta.T @ acts[l]
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l]) * _act_prime(zs[l - 1],
                                                             params.activation)
    return grads_w, grads_b


@dataclass
class TrainReport:
    train_loss: np.ndarray
    val_loss: np.ndarray
    best_epoch: int
    best_val_loss: float
    n_train: int
    n_val: int


def train(params, X, Y, epochs, seed=0, batch_size=32, learning_rate=1e-3,
          val_fraction=0.2):
    """Adam descent; returns (best-validation params, report)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] != Y.shape[0] or X.shape[0] == 0:
        raise ValueError("need matching, nonempty input and target rows")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    if epochs < 1:
        raise ValueError("need at least one epoch")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(X.shape[0])
    n_val = max(1, int(round(val_fraction * X.shape[0])))
    if n_val >= X.shape[0]:
        raise ValueError("validation split leaves no training rows")
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    Xt, Yt = X[train_idx], Y[train_idx]
    Xv, Yv = X[val_idx], Y[val_idx]

    m_w = [np.zeros_like(W) for W in params.weights]
    v_w = [np.zeros_like(W) for W in params.weights]
    m_b = [np.zeros_like(b) for b in params.biases]
    v_b = [np.zeros_like(b) for b in params.biases]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    params = params.copy()
    best = params.copy()
    best_val = np.inf
    best_epoch = 0
    train_hist = np.empty(epochs)
    val_hist = np.empty(epochs)

    n_train = Xt.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n_train)
        batch_losses = []
        for lo in range(0, n_train, batch_size):
            idx = order[lo:lo + batch_size]
            Xb, Yb = Xt[idx], Yt[idx]
            d = forward(params, Xb) - Yb
            batch_losses.append(np.mean(np.sum(d * d, axis=1)))
            gw, gb = backward(params, Xb, Yb)
            step += 1
            c1 = 1.0 - beta1 ** step
            c2 = 1.0 - beta2 ** step
            for l in range(len(params.weights)):
                m_w[l] = beta1 * m_w[l] + (1.0 - beta1) * gw[l]
                v_w[l] = beta2 * v_w[l] + (1.0 - beta2) * gw[l] ** 2
                params.weights[l] -= learning_rate * (m_w[l] / c1) / (
                    np.sqrt(v_w[l] / c2) + eps)
                m_b[l] = beta1 * m_b[l] + (1.0 - beta1) * gb[l]
                v_b[l] = beta2 * v_b[l] + (1.0 - beta2) * gb[l] ** 2
                params.biases[l] -= learning_rate * (m_b[l] / c1) / (
                    np.sqrt(v_b[l] / c2) + eps)
        train_hist[epoch] = np.mean(batch_losses)
        val_hist[epoch] = loss_mse(params, Xv, Yv)
        if not np.isfinite(train_hist[epoch]) or not np.isfinite(val_hist[epoch]):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
        if val_hist[epoch] < best_val:
            best_val = val_hist[epoch]
            best_epoch = epoch
            best = params.copy()

    report = TrainReport(train_loss=train_hist, val_loss=val_hist,
                         best_epoch=best_epoch, best_val_loss=float(best_val),
                         n_train=n_train, n_val=n_val)
    return best, report


def train_on_table(params, table, epochs, seed=0, batch_size=32,
                   learning_rate=1e-3, val_fraction=0.2):
    return train(params, table.normalized_inputs(), table.normalized_outputs(),
                 epochs, seed=seed, batch_size=batch_size,
                 learning_rate=learning_rate, val_fraction=val_fraction)


def predict_coefficients(params, in_ranges, out_ranges, t, mu, in_log=None):
    """Denormalized coefficient prediction at one (t, mu) query.

    Queries outside the training ranges are clamped to the range edge.
    in_log must repeat the flags the training table was built with.
    """
    from .projection import (affine_denormalize, affine_normalize,
                             transform_inputs)

    if in_ranges is None or out_ranges is None:
        raise ValueError("normalization ranges are required; the net was "
                         "trained on the [0, 1]-scaled table")
    raw = np.concatenate([[float(t)], np.asarray(mu, dtype=float).ravel()])
    if raw.shape[0] != in_ranges.shape[0]:
        raise ValueError(f"expected {in_ranges.shape[0] - 1} parameter "
                         f"components, got {raw.shape[0] - 1}")
    if in_log is not None:
        raw = transform_inputs(raw[None, :], in_log)[0]
    x = np.empty_like(raw)
    for j in range(raw.shape[0]):
        x[j] = affine_normalize(raw[j], *in_ranges[j])
    clamped = np.clip(x, 0.0, 1.0)
    if np.any(clamped != x):
        which = np.flatnonzero(clamped != x)
        log.warning("query outside training ranges in component(s) %s; "
                    "clamping to the box", which.tolist())
    y = forward(params, clamped[None, :])[0]
    out = np.empty_like(y)
    for j in range(y.shape[0]):
        out[j] = affine_denormalize(y[j], *out_ranges[j])
    return out
