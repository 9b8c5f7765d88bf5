"""Corruption-robustness toolkit for CIFAR-10 noise-augmented training."""

__version__ = "0.1.0"
