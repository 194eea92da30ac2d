"""Compact 3D FDTD engine for dipole emission in nanowire and planar scenes."""

from .grid import FdtdError, GridSpec, InstabilityError, Scene, layout
from .engine import RunResult, Simulation, Source, read_snapshot

__all__ = ["FdtdError", "GridSpec", "InstabilityError", "Scene", "layout", "RunResult", "Simulation",
           "Source", "read_snapshot"]
