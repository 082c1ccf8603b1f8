"""Introspective convolutional classifiers.

A single discriminative network that alternates between synthesizing
pseudo-negative samples from its own current model and retraining against
them, plus an exact grid-density oracle for validating the update rule at
small scale.
"""

__version__ = "0.1.0"
