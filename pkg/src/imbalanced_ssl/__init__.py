"""Semi-supervised learning under class imbalance, at desk scale.

Pieces: an exact pseudo-label sampling law for two-Gaussian mixtures with a
Monte Carlo cross-check, class-distribution anchors matched by KL divergence,
a from-scratch multi-head MLP with analytic gradients, balanced losses, and a
threshold controller driven by the classifier's output-bias drift.
"""

__version__ = "0.1.0"
