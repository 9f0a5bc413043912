"""Madelung fields, stochastic phase transformations, particle ensembles and dynamic programming on lattices."""

__version__ = "0.1.0"
