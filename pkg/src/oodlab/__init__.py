"""Desk-scale laboratory for outlier-exposure OOD detection.

Small dense models (an MLP backbone plus a linear or Gaussian
Mahalanobis head), the training criteria used for outlier exposure
(uniform-target cross-entropy, energy, and the in-distribution
compatible losses), hand-derived analytic gradients for all of them,
detector metrics with brute-force oracle twins, and the simulations
that exercise the gradient-sign, likelihood-ranking, and feature-shift
behaviour of each criterion.
"""

__version__ = "0.1.0"
