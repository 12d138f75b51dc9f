"""Laboratory for exchangeable-sequence prediction models.

Exact Bayesian sequence models, one-step vs multi-step inference, the
information-theoretic gap between them, property checkers for exchangeability
and conditional identity in distribution, decision-making simulators
(Thompson sampling, uncertainty-based active learning), and a small
trainable transformer with swappable attention masks.
"""

from exchlab.core import (
    DegenerateDensityError,
    DimensionError,
    Gaussian,
    MultivariateGaussian,
    NotPositiveDefiniteError,
    RngStream,
    gaussian_logpdf,
    mvn_kl,
    normal_cdf,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateDensityError",
    "DimensionError",
    "Gaussian",
    "MultivariateGaussian",
    "NotPositiveDefiniteError",
    "RngStream",
    "gaussian_logpdf",
    "mvn_kl",
    "normal_cdf",
    "__version__",
]
