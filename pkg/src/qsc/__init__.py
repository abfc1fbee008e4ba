"""Discrete-time quantum stochastic calculus on a toy Fock space."""
__version__ = "0.1.0"
