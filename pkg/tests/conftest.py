import numpy as np
import pytest

from consistency_lab import GaussianMixture, Schedule, ScoreProbe


@pytest.fixture
def sched():
    return Schedule()


@pytest.fixture
def gm_single():
    return GaussianMixture(weights=[1.0], means=[[0.0]], variances=[[1.0]])


@pytest.fixture
def gm_bimodal():
    return GaussianMixture(
        weights=[0.5, 0.5], means=[[-1.0], [1.0]], variances=[[0.25], [0.25]]
    )


@pytest.fixture
def gm_2d():
    return GaussianMixture(
        weights=[0.5, 0.5],
        means=[[-1.0, -0.5], [1.0, 0.5]],
        variances=[[0.3, 0.4], [0.35, 0.25]],
    )


@pytest.fixture
def probe_single(gm_single, sched):
    return ScoreProbe(gm_single, sched)


@pytest.fixture
def probe_bimodal(gm_bimodal, sched):
    return ScoreProbe(gm_bimodal, sched)


@pytest.fixture
def probe_2d(gm_2d, sched):
    return ScoreProbe(gm_2d, sched)


def fd_gradient(fn, x, h):
    """Central-difference gradient of a scalar function of x."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for j in range(x.shape[-1]):
        e = np.zeros_like(x)
        e[..., j] = h
        out[..., j] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return out
