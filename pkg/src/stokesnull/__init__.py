"""Numerical workbench for null controllability of 2D Stokes and
Navier-Stokes flows with one vanishing control component."""

__version__ = "0.1.0"
