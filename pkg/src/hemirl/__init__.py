"""Desk-scale bi-hemispheric reinforcement learning on a 2D control suite."""

__version__ = "0.1.0"
