"""Photophysics, photon-statistics and antenna simulation toolkit for a
single emitter in a dielectric nanowire."""

__version__ = "0.1.0"
