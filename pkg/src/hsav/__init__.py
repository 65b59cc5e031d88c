"""Arbitrarily high-order energy-stable schemes for gradient flows:
Gauss-collocation Runge-Kutta on the scalar auxiliary variable (SAV)
reformulation with Fourier pseudospectral space discretisation."""

__version__ = "0.1.0"
