"""Nonparametric estimation of conditional volatility given a functional covariate,
with responses missing at random."""

__version__ = "0.1.0"
