"""Finite-alphabet workbench for communicating sources over black-box channels."""

__version__ = "0.1.0"
