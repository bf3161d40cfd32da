"""Quantum neural networks for cloud-cover regression."""

__version__ = "0.1.0"
