"""Adjoint-state gradients for parametrised quantum dynamics, simulated with numpy."""

__version__ = "0.1.0"
