"""Borel-Laplace summation laboratory for singularly perturbed quasiperiodic Cauchy problems."""

__version__ = "0.1.0"
