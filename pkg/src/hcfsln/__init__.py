"""Hyperbolic cross-modal few-shot learning on the Poincare ball.

Float64 reverse-mode autodiff, adaptive-curvature ball geometry, multimodal
attention encoders with gated fusion, episodic prototype training, Welch-test
ablations, and a CLI. See README.md for usage.
"""

__version__ = "0.1.0"
