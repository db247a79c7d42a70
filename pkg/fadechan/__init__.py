"""Transmittance distributions for free-space optical channels with annular apertures."""
