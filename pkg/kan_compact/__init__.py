"""Kolmogorov-Arnold networks, Fourier KANs and MLP baselines for transistor compact modeling."""

__version__ = "0.1.0"
