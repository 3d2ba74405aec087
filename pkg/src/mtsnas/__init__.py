"""Multi-scale differentiable architecture search for multivariate forecasting."""

__version__ = "0.1.0"
