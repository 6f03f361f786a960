"""Counter-based splittable random streams for reproducible Monte Carlo.

Every stochastic operation in the package draws from a ``SubstreamRng``,
a Philox-keyed stream identified by ``(seed, stream_id)``.  Distinct ids
give statistically independent streams, and a given id reproduces the
same sequence on any platform and under any scheduling.

Normal variates use a fixed Box-Muller transform over the raw 64-bit
output so the mapping from bits to floats is pinned down:

    u1 = ((a >> 11) + 1) * 2**-53   in (0, 1]
    u2 = ( b >> 11     ) * 2**-53   in [0, 1)
    z1 = sqrt(-2 ln u1) * cos(2 pi u2)
    z2 = sqrt(-2 ln u1) * sin(2 pi u2)

where a, b are consecutive raw words.  Requests for an odd count discard
the trailing half of the last pair.
"""

from __future__ import annotations

import hashlib

import numpy as np

_U64 = 0xFFFFFFFFFFFFFFFF
_TWO_NEG53 = 2.0 ** -53


def _splitmix(z: int) -> int:
    # splitmix64 finalizer; full-period bijection on 64-bit words
    z = (z + 0x9E3779B97F4A7C15) & _U64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return z ^ (z >> 31)


def derive_seed(seed: int, *labels) -> int:
    """Derive a child seed from ``seed`` and a path of labels.

    Labels may be ints or strings; the derivation is order-sensitive, so
    ``derive_seed(s, "train", k)`` and ``derive_seed(s, k, "train")``
    differ.  Used to hand independent seeds to nested components.
    """
    z = int(seed) & _U64
    for lab in labels:
        if isinstance(lab, str):
            lab = int.from_bytes(
                hashlib.blake2b(lab.encode(), digest_size=8).digest(), "little"
            )
        z = _splitmix(z ^ _splitmix(int(lab) & _U64))
    return z


class SubstreamRng:
    """One independent stream of the counter-based generator family."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _U64
        self.stream_id = int(stream_id) & _U64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._bg = np.random.Philox(key=key)
        self.normals_drawn = 0

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit words."""
        return self._bg.random_raw(n)

    def uniform(self, shape=()) -> np.ndarray:
        """Uniform f64 samples in [0, 1)."""
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=int)) if shape else 1
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG53
        return u.reshape(shape) if shape else float(u[0])

    def normal(self, shape=()) -> np.ndarray:
        """Standard normal samples via the documented Box-Muller transform."""
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=int)) if shape else 1
        n_pairs = (n + 1) // 2
        w = self.raw(2 * n_pairs)
        a = w[0::2]
        b = w[1::2]
        u1 = ((a >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * _TWO_NEG53
        u2 = (b >> np.uint64(11)).astype(np.float64) * _TWO_NEG53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = (2.0 * np.pi) * u2
        z = np.empty(2 * n_pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        z = z[:n]
        self.normals_drawn += n
        return z.reshape(shape) if shape else float(z[0])


def rng_substream(seed: int, stream_id: int = 0) -> SubstreamRng:
    """Open the substream identified by ``(seed, stream_id)``."""
    return SubstreamRng(seed, stream_id)


def path_noise(seed: int, n_paths: int, n_steps: int, dim: int) -> np.ndarray:
    """Per-path driving noise, shape ``(n_paths, n_steps, dim)``.

    Path ``i`` reads from substream ``(seed, i)``, so the noise assigned
    to a path does not depend on how many other paths run or in what
    order they are simulated.
    """
    out = np.empty((n_paths, n_steps, dim))
    for i in range(n_paths):
        out[i] = SubstreamRng(seed, i).normal((n_steps, dim))
    return out


def _as_shape(shape):
    if shape == ():
        return ()
    if np.isscalar(shape):
        return (int(shape),)
    return tuple(int(s) for s in shape)
