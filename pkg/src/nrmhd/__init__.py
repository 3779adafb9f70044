"""Pseudo-spectral laboratory for the viscous non-resistive MHD system."""

__version__ = "0.1.0"
