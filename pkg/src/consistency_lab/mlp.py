"""Small fully-connected network with hand-written backprop.

Parameters are a list of (W, b) pairs with W of shape (n_in, n_out);
hidden layers use tanh, the output layer is linear.  ``backward``
accumulates parameter gradients for an arbitrary upstream gradient on
the outputs, which is all the training losses need: each loss computes
d(loss)/d(output) per evaluated point analytically and pushes it
through here.
"""

from __future__ import annotations

import numpy as np

from .rng import SubstreamRng, derive_seed


def init_params(layer_dims, seed: int):
    """Xavier-uniform weights, zero biases; one substream per layer."""
    params = []
    for k in range(len(layer_dims) - 1):
        n_in, n_out = layer_dims[k], layer_dims[k + 1]
        rng = SubstreamRng(derive_seed(seed, "init", k), 0)
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = (rng.uniform((n_in, n_out)) * 2.0 - 1.0) * limit
        b = np.zeros(n_out)
        params.append((w, b))
    return params


def forward(params, x):
    """Evaluate the network on a batch (N, n_in); returns (out, cache)."""
    acts = [np.asarray(x, dtype=float)]
    h = acts[0]
    for k, (w, b) in enumerate(params):
        z = h @ w + b
        h = np.tanh(z) if k < len(params) - 1 else z
        acts.append(h)
    return h, acts


def backward(params, cache, dout):
    """Parameter gradients for upstream gradient dout (N, n_out)."""
    grads = [None] * len(params)
    delta = np.asarray(dout, dtype=float)
    for k in range(len(params) - 1, -1, -1):
        w, _ = params[k]
        a_prev = cache[k]
        if k < len(params) - 1:
            # cache[k + 1] holds tanh(z); its derivative is 1 - tanh^2
            delta = delta * (1.0 - cache[k + 1] ** 2)
        grads[k] = (a_prev.T @ delta, delta.sum(axis=0))
        if k > 0:
            delta = delta @ w.T
    return grads


def zeros_like_params(params):
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]


def add_grads(total, grads, scale=1.0):
    for k, (gw, gb) in enumerate(grads):
        tw, tb = total[k]
        tw += scale * gw
        tb += scale * gb
    return total


def clone_params(params):
    return [(w.copy(), b.copy()) for w, b in params]


def params_allfinite(params):
    return all(np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in params)


def flatten_params(params):
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in params])


def set_flat_param(params, index, value):
    """Assign one scalar parameter by flat index (for FD gradient checks)."""
    offset = 0
    for w, b in params:
        for arr in (w, b):
            if index < offset + arr.size:
                arr.ravel()[index - offset] = value
                return
            offset += arr.size
    raise IndexError(f"flat index {index} out of range {offset}")


class Adam:
    """Adam with bias correction; state arrays mirror the param structure."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = zeros_like_params(params)
        self.v = zeros_like_params(params)

    def step(self, params, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, (gw, gb) in enumerate(grads):
            for arr, g, m, v in (
                (params[k][0], gw, self.m[k][0], self.v[k][0]),
                (params[k][1], gb, self.m[k][1], self.v[k][1]),
            ):
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                arr -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class Sgd:
    """Plain stochastic gradient descent."""

    def __init__(self, params, lr=1e-3):
        self.lr = lr

    def step(self, params, grads):
        for k, (gw, gb) in enumerate(grads):
            params[k][0][...] -= self.lr * gw
            params[k][1][...] -= self.lr * gb
