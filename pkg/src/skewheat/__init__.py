"""Simulation and verification toolkit for the skew stochastic heat equation."""

__version__ = "0.1.0"
