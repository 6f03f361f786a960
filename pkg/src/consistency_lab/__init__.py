"""Numerical lab for consistency properties of score-based diffusion models.

Everything runs on analytically tractable Gaussian mixtures, so exact
scores, denoisers, and flow maps are available as references for the
stochastic and finite-difference machinery.
"""

from .schedule import Schedule
from .mixtures import GaussianMixture, ScoreProbe
from .rng import SubstreamRng, derive_seed, rng_substream

__version__ = "0.1.0"

__all__ = [
    "GaussianMixture",
    "Schedule",
    "ScoreProbe",
    "SubstreamRng",
    "derive_seed",
    "rng_substream",
    "__version__",
]
