"""Variational and importance-weighted autoencoders in plain numpy.

Everything is float64. Gradients are computed by explicit reverse-mode
passes through small tanh MLPs, so each piece can be checked against
finite differences or closed-form oracles.
"""

__version__ = "0.1.0"
