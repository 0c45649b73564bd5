"""Differentiable backward-chaining prover with learned knowledge-base selection."""

__version__ = "0.1.0"
