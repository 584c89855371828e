"""Nonmyopic batch acquisition for Bayesian optimization and quadrature."""

__version__ = "0.1.0"
