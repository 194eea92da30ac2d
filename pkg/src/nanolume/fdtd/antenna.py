"""Scene-level runs: nanowire s/p, homogeneous calibration, bulk reference."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import analysis as A
from .engine import DEFAULT_WAVELENGTHS, RunResult, Simulation
from .grid import COURANT_LIMIT, DEFAULT_AIR_NM, DEFAULT_LATERAL_NM, DEFAULT_SUBSTRATE_NM, Layout, Scene, layout

log = logging.getLogger(__name__)

DEFAULT_CELL_NM = 637.0 / 20.0 / 2.4
BULK_LATERAL_NM = 2400.0


@dataclass
class AntennaConfig:
    cell_nm: float = DEFAULT_CELL_NM
    lateral_nm: float = DEFAULT_LATERAL_NM
    bulk_lateral_nm: float = BULK_LATERAL_NM
    substrate_nm: float = DEFAULT_SUBSTRATE_NM
    air_nm: float = DEFAULT_AIR_NM
    pml_cells: int = 10
    courant: float = COURANT_LIMIT
    max_steps: int = 10000
    decay: float = 1e-7
    box_half_cells: int = 6
    top_gap_cells: int = 3
    wavelengths_nm: tuple = DEFAULT_WAVELENGTHS
    na: float = 0.95
    threads: int = 1

    def to_dict(self):
        d = asdict(self)
        # the thread count does not change results, so keep it out of reports
        d.pop("threads")
        d["wavelengths_nm"] = [float(x) for x in self.wavelengths_nm]
        return d


@dataclass
class SceneResult:
    scene: Scene
    layout: Layout
    run: RunResult
    power: A.PowerSpectrum
    far_field: A.FarField | None = None
    eta: np.ndarray | None = None  # collection efficiency per wavelength
    purcell: np.ndarray | None = None
    reference: A.PowerSpectrum | None = None
    notes: list = field(default_factory=list)

    @property
    def wavelengths(self):
        return self.power.wavelengths


def place(scene: Scene, cfg: AntennaConfig) -> Layout:
    lateral = cfg.bulk_lateral_nm if scene.kind == "bulk" else cfg.lateral_nm
    return layout(scene, cfg.cell_nm, lateral, cfg.substrate_nm, cfg.air_nm, cfg.pml_cells, cfg.courant,
                  cfg.max_steps, cfg.box_half_cells, cfg.top_gap_cells)


def run_layout(lay: Layout, cfg: AntennaConfig) -> RunResult:
    sim = Simulation(lay, cfg.wavelengths_nm, threads=cfg.threads)
    res = sim.run(decay=cfg.decay)
    log.info("%s/%s: %d steps, decayed=%s", lay.scene.kind, lay.scene.polarization, res.steps, res.decayed)
    return res


def simulate(scene: Scene, cfg: AntennaConfig, with_reference: bool = True) -> SceneResult:
    """Run one scene; adds the far field and collection efficiency when
    the scene has a top monitor, and the Purcell factor against a
    homogeneous run on the same grid when ``with_reference``."""
    lay = place(scene, cfg)
    res = run_layout(lay, cfg)
    out = SceneResult(scene, lay, res, A.radiated_power(res))
    if not res.decayed:
        out.notes.append("field energy had not decayed to the target when max_steps was reached")
    if lay.top_plane_k >= 0:
        out.far_field = A.far_field(res, extra_theta_deg=(A.na_angle_deg(cfg.na),))
        out.eta = A.collection_efficiency(out.far_field, out.power, cfg.na)
    if with_reference and scene.kind != "homogeneous":
        ref = run_layout(A.reference_layout(lay), cfg)
        out.reference = A.radiated_power(ref)
        out.purcell = A.purcell(out.power, out.reference)
        if not ref.decayed:
            out.notes.append("reference run did not reach the decay target")
    elif scene.kind == "homogeneous":
        out.reference = out.power
        out.purcell = A.purcell(out.power, out.power)
    return out


def nanowire_pair(cfg: AntennaConfig, scene: Scene | None = None, with_reference=True) -> dict:
    """s and p runs of one nanowire scene."""
    sc = scene if scene is not None else Scene(kind="nanowire")
    return {pol: simulate(sc.with_polarization(pol), cfg, with_reference) for pol in ("s", "p")}


def bulk_reference(cfg: AntennaConfig, depth_nm: float = 1000.0, n_substrate: float = 2.4,
                   lateral_offset_nm=(0.0, 0.0)) -> dict:
    """Collection efficiency per wavelength and polarization for a dipole
    ``depth_nm`` below a planar surface."""
    sc = Scene(kind="bulk", n_substrate=n_substrate, depth_nm=depth_nm,
               dipole_offset_nm=(float(lateral_offset_nm[0]), float(lateral_offset_nm[1]), 0.0))
    return {pol: simulate(sc.with_polarization(pol), cfg, with_reference=False) for pol in ("s", "p")}


def averaged_eta(pair: dict, weights=None) -> float:
    s, p = pair["s"], pair["p"]
    return A.nv_average(s.eta, p.eta, s.wavelengths, p.wavelengths, weights)


def averaged_purcell(pair: dict, weights=None) -> float:
    s, p = pair["s"], pair["p"]
    return A.nv_average(s.purcell, p.purcell, s.wavelengths, p.wavelengths, weights)


def with_cell(cfg: AntennaConfig, cell_nm: float) -> AntennaConfig:
    return replace(cfg, cell_nm=float(cell_nm))
