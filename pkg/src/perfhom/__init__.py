"""Randomly perforated domains at critical scaling: sampling, capacities, convergence studies."""

__version__ = "0.1.0"
