"""Freezing method for similarity solutions of the multi-dimensional Burgers'
equation: finite-volume central scheme plus a half-explicit IMEX Runge-Kutta
integrator for the resulting DAE."""

__version__ = "0.1.0"
