"""Finite-difference simulator for non-isothermal diffuse-interface two-phase flow."""

__version__ = "0.1.0"
