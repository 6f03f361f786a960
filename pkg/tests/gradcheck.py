"""Finite-difference gradient oracle shared by training and acceptance tests.

The oracle is a central difference, Richardson-extrapolated over steps h
and h/2 so its own truncation error is fourth order.  Checked indices
are sampled among components whose analytic gradient is large enough to
be resolvable by f64 differences of the loss; components below that
scale cannot be certified by any finite-difference scheme at double
precision.
"""

import numpy as np

from consistency_lab import mlp
from consistency_lab.rng import SubstreamRng


def grad_check(model, loss_fn, n_params=10, seed=0, base_step=1e-6,
               richardson=False, rel_floor=1e-10):
    """Worst relative error between analytic and FD gradients.

    loss_fn() -> (loss, grads) evaluated on a frozen batch so the loss
    is a pure function of the parameters.
    """
    _, grads = loss_fn()
    flat_g = mlp.flatten_params(grads)
    cand = np.where(np.abs(flat_g) >= 1e-3 * np.max(np.abs(flat_g)))[0]
    rng = SubstreamRng(seed, 0)
    idxs = cand[(rng.uniform((n_params,)) * cand.size).astype(int)]
    flat_p = mlp.flatten_params(model.params)

    def fd_at(i, h):
        theta = flat_p[i]
        mlp.set_flat_param(model.params, int(i), theta + h)
        lp, _ = loss_fn()
        mlp.set_flat_param(model.params, int(i), theta - h)
        lm, _ = loss_fn()
        mlp.set_flat_param(model.params, int(i), theta)
        return (lp - lm) / (2.0 * h)

    worst = 0.0
    for i in idxs:
        h = base_step * (1.0 + abs(flat_p[i]))
        if richardson:
            fd = (4.0 * fd_at(i, 0.5 * h) - fd_at(i, h)) / 3.0
        else:
            fd = fd_at(i, h)
        rel = abs(flat_g[i] - fd) / max(abs(flat_g[i]), abs(fd), rel_floor)
        worst = max(worst, rel)
    return worst
