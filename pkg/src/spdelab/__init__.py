"""Spectral-Galerkin simulation and Ito-formula verification for semilinear jump SPDEs."""

__version__ = "0.1.0"
