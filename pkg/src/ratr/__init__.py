"""Rank-adaptive tensor recovery for sparse-sample stochastic collocation."""

__version__ = "0.1.0"
