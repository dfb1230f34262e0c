"""PDE-based Bayesian inversion with surrogate-accelerated pCN sampling."""

__version__ = "0.1.0"
