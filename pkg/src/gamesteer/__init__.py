"""Steering no-regret learners in extensive-form games via vanishing payments."""

__version__ = "0.1.0"
