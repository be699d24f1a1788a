"""Small fully connected regressor with hand-written backpropagation.

Hidden layers use ``tanh``; the output layer is linear with a single unit.
The network also carries the affine input normalization and output scale it
was trained with, so a saved network is self-contained.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError


def layer_sizes(K: int, L: int) -> list[int]:
    """Layer widths of the value network for ``K`` locations and ``L`` devices."""
    return [5 * L + K + 3, 4 * K + L, 4 * K, 3 * K, 2 * K, K, 1]


class QNetwork:
    def __init__(self, sizes, seed=0, *, weights=None, biases=None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or sizes[-1] != 1 or min(sizes) < 1:
            raise DomainError(f"invalid layer sizes {sizes}")
        self.sizes = sizes
        if weights is None:
            rng = np.random.default_rng(seed)
            weights, biases = [], []
            for n_in, n_out in zip(sizes[:-1], sizes[1:]):
                bound = 1.0 / np.sqrt(n_in)
                weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
                biases.append(np.zeros(n_out))
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for w, b, n_in, n_out in zip(self.weights, self.biases, sizes[:-1], sizes[1:]):
            if w.shape != (n_in, n_out) or b.shape != (n_out,):
                raise DomainError("parameter shapes do not match layer sizes")
        self.input_lo = np.zeros(sizes[0])
        self.input_hi = np.ones(sizes[0])
        self.reward_scale = 1.0
        self._adam = None

    @property
    def n_inputs(self):
        return self.sizes[0]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self):
        net = QNetwork(self.sizes, weights=[w.copy() for w in self.weights],
                       biases=[b.copy() for b in self.biases])
        net.input_lo = self.input_lo.copy()
        net.input_hi = self.input_hi.copy()
        net.reward_scale = self.reward_scale
        return net

    def normalize(self, raw):
        """Map raw features into [0, 1] with the stored min-max bounds."""
        span = self.input_hi - self.input_lo
        out = (np.asarray(raw, dtype=float) - self.input_lo) / np.where(span > 0, span, 1.0)
        return np.clip(out, 0.0, 1.0)

    def get_flat(self):
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def set_flat(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params:
            raise DomainError(f"expected {self.n_params} parameters, got {theta.size}")
        i = 0
        for w, b in zip(self.weights, self.biases):
            w[...] = theta[i:i + w.size].reshape(w.shape)
            i += w.size
            b[...] = theta[i:i + b.size]
            i += b.size

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.n_inputs:
            raise DomainError(f"expected {self.n_inputs} inputs, got {X.shape[-1]}")
        return X

    def forward(self, X):
        """Outputs for a (n, d) batch or a single (d,) vector."""
        X = self._check(X)
        h = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
        return h[..., 0]

    def gradients(self, X, y):
        """Mean squared error on ``(X, y)`` and its gradient per parameter."""
        X = np.atleast_2d(self._check(X))
        y = np.asarray(y, dtype=float).ravel()
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        err = acts[-1][:, 0] - y
        mse = float(np.mean(err * err))
        delta = (2.0 / y.size) * err[:, None]
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for i in range(last, -1, -1):
            gw[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        return mse, gw, gb

    def mse(self, X, y):
        err = self.forward(np.atleast_2d(X)) - np.asarray(y, dtype=float).ravel()
        return float(np.mean(err * err))

    def to_dict(self):
        return {
            "schema_version": 1,
            "kind": "qnetwork",
            "sizes": self.sizes,
            "activation": "tanh",
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "input_lo": self.input_lo.tolist(),
            "input_hi": self.input_hi.tolist(),
            "reward_scale": self.reward_scale,
        }

    @classmethod
    def from_dict(cls, doc):
        sizes = doc["sizes"]
        weights = [np.asarray(w, dtype=float).reshape(n_in, n_out)
                   for w, n_in, n_out in zip(doc["weights"], sizes[:-1], sizes[1:])]
        net = cls(sizes, weights=weights, biases=doc["biases"])
        net.input_lo = np.asarray(doc["input_lo"], dtype=float)
        net.input_hi = np.asarray(doc["input_hi"], dtype=float)
        net.reward_scale = float(doc["reward_scale"])
        return net


def mlp_forward(net: QNetwork, f) -> float:
    f = np.asarray(f, dtype=float)
    if f.ndim != 1:
        raise DomainError("expected a single feature vector")
    return float(net.forward(f))


def mlp_train_batch(net: QNetwork, X, y, lr=1e-3, method="adam"):
    """One gradient step on the batch's mean squared error.

    ``method`` is ``"sgd"`` (plain gradient descent) or ``"adam"``.  Returns
    ``(net, mse)`` with the MSE measured before the step; ``net`` is updated
    in place.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise DomainError("empty batch")
    mse, gw, gb = net.gradients(X, y)
    grads = gw + gb
    params = net.weights + net.biases
    if method == "sgd":
        for p, g in zip(params, grads):
            p -= lr * g
    elif method == "adam":
        b1, b2, eps = 0.9, 0.999, 1e-8
        if net._adam is None:
            net._adam = {"t": 0, "m": [np.zeros_like(p) for p in params],
                         "v": [np.zeros_like(p) for p in params]}
        st = net._adam
        st["t"] += 1
        c1 = 1 - b1 ** st["t"]
        c2 = 1 - b2 ** st["t"]
        for p, g, m, v in zip(params, grads, st["m"], st["v"]):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    else:
        raise DomainError(f"unknown method {method!r}")
    return net, mse
