"""Shared FDTD runs.  The antenna scenes are expensive, so each is computed
once per session and reused by the unit and acceptance tests."""

import math
import time

import numpy as np
import pytest

from nanolume.fdtd import antenna as T
from nanolume.fdtd.engine import Simulation
from nanolume.fdtd.grid import Scene, grow_box, layout

VACUUM_CELL_NM = 637.0 / 20.0
CAL_WAVELENGTHS = (637.0, 700.0, 780.0)

# PASS/FAIL lines of the acceptance criteria, repeated in the terminal summary
ACCEPTANCE = []

# wall-clock seconds of the session fixtures, for the runtime budgets
TIMINGS = {}


def timed(name, fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    TIMINGS[name] = time.perf_counter() - t0
    return out


def homogeneous_run(n, cell_nm, extra_cells=None, size_nm=900.0):
    lay = layout(Scene(kind="homogeneous", n_background=n), cell_nm=cell_nm, lateral_nm=size_nm,
                 height_nm=size_nm)
    boxes = [grow_box(lay, extra_cells)] if extra_cells else []
    return Simulation(lay, CAL_WAVELENGTHS, extra_boxes=boxes).run()


@pytest.fixture(scope="session")
def vacuum_run():
    """Vacuum dipole at 20 cells per wavelength with a second box 5 cells larger."""
    return timed("vacuum", homogeneous_run, 1.0, VACUUM_CELL_NM, 5)


@pytest.fixture(scope="session")
def diamond_pair():
    """Vacuum and n = 2.4 homogeneous runs on one grid fine enough for diamond."""
    cell = 637.0 / 20.0 / 2.4
    return homogeneous_run(1.0, cell), homogeneous_run(2.4, cell)


@pytest.fixture(scope="session")
def antenna_config():
    return T.AntennaConfig()


@pytest.fixture(scope="session")
def nanowire(antenna_config):
    """s and p nanowire runs at the reference resolution, with homogeneous references."""
    return timed("nanowire", T.nanowire_pair, antenna_config)


@pytest.fixture(scope="session")
def bulk(antenna_config):
    return timed("bulk", T.bulk_reference, antenna_config)


SMALL_WIRE = Scene(kind="nanowire", radius_nm=100.0, height_nm=600.0)


def small_config(cell_nm, **kw):
    base = dict(cell_nm=cell_nm, lateral_nm=800.0, bulk_lateral_nm=1600.0, substrate_nm=200.0, air_nm=200.0,
                wavelengths_nm=(637.0, 700.0), box_half_cells=max(3, int(math.ceil(60.0 / cell_nm))))
    base.update(kw)
    return T.AntennaConfig(**base)


def assert_finite(*arrays):
    for a in arrays:
        assert np.all(np.isfinite(a))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


HEAVY_FIXTURES = {"nanowire", "bulk"}


def pytest_collection_modifyitems(items):
    # anything touching the reference-resolution scenes is slow
    for item in items:
        if HEAVY_FIXTURES & set(getattr(item, "fixturenames", ())) or item.name == "test_convergence_trend":
            item.add_marker(pytest.mark.slow)
