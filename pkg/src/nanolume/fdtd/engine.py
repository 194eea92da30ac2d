"""Time stepping, dipole source and frequency-domain monitors."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import kernels as K
from .grid import FdtdError, InstabilityError, Layout, permittivity

# default source band: Gaussian-modulated sinusoid spanning 600-800 nm
BAND_NM = (600.0, 800.0)
DEFAULT_WAVELENGTHS = tuple(np.linspace(637.0, 780.0, 12))

PML_ORDER = 3
PML_KAPPA_MAX = 5.0
PML_SIGMA_SCALE = 0.8

SNAPSHOT_MAGIC = b"NLFD"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class Source:
    """Point current moment s(t) = amplitude sin(w0 (t - t0)) exp(-(t - t0)^2 / 2 tau^2)."""

    omega0: float
    tau: float
    t0: float
    amplitude: float = 1.0

    @classmethod
    def for_band(cls, band_nm=BAND_NM, amplitude=1.0):
        f_hi, f_lo = 1.0 / band_nm[0], 1.0 / band_nm[1]
        f0 = 0.5 * (f_hi + f_lo)
        df = 0.5 * (f_hi - f_lo)
        tau = 1.0 / (2.0 * math.pi * df)
        return cls(2.0 * math.pi * f0, tau, 5.0 * tau, amplitude)

    def __call__(self, t):
        u = np.asarray(t, dtype=float) - self.t0
        return self.amplitude * np.sin(self.omega0 * u) * np.exp(-0.5 * (u / self.tau) ** 2)

    @property
    def end_time(self) -> float:
        return self.t0 + 6.0 * self.tau


def _e_plane(view):
    return lambda: (view, view, 0.5)


def _h_pair(v1, v2):
    # mean of the two H planes straddling an E-node plane
    return lambda: (v1, v2, 0.5)


class PlaneDft:
    """Running DFT of a plane of one field quantity, optionally the mean of
    two adjacent planes (used to bring H onto the E-node plane)."""

    def __init__(self, getter, n_lambda, time_offset):
        self.getter = getter  # returns (f1, f2, weight)
        self.time_offset = time_offset  # 1.0 for E, 0.5 for H (in units of dt)
        f1, _, _ = getter()
        self.re = np.zeros(f1.shape + (n_lambda,))
        self.im = np.zeros(f1.shape + (n_lambda,))

    def accumulate(self, cr, ci):
        f1, f2, w = self.getter()
        K.dft_accumulate(self.re, self.im, f1, f2, w, cr, ci)

    @property
    def value(self):
        return np.moveaxis(self.re + 1j * self.im, -1, 0)


@dataclass
class RunResult:
    layout: Layout
    wavelengths: np.ndarray
    source_spectrum: np.ndarray  # DFT of the current moment s(t)
    box: dict  # face name -> dict of component DFTs, each (n_lambda, a, b)
    top: dict | None
    dipole_e: np.ndarray  # DFT of the driven E component at the dipole
    steps: int
    stable: bool
    peak_energy: float
    final_energy: float
    decayed: bool = True  # False when max_steps ended the run before the decay target
    energy_trace: list = field(default_factory=list)
    extra_boxes: list = field(default_factory=list)  # face DFTs of additional flux boxes


class Simulation:
    def __init__(self, lay: Layout, wavelengths=DEFAULT_WAVELENGTHS, source: Source | None = None,
                 threads: int = 1, extra_boxes=()):
        self.lay = lay
        g = lay.grid
        self.wavelengths = np.asarray(wavelengths, dtype=float)
        if self.wavelengths.ndim != 1 or self.wavelengths.size == 0:
            raise FdtdError("need at least one wavelength")
        self.source = source if source is not None else Source.for_band()
        lo, hi = 2 * math.pi / (self.source.omega0 + 3 / self.source.tau), 2 * math.pi / max(
            self.source.omega0 - 3 / self.source.tau, 1e-12)
        if np.any(self.wavelengths < lo) or np.any(self.wavelengths > hi):
            raise FdtdError("monitor wavelengths fall outside the source bandwidth")
        self.threads = max(1, int(threads))
        nx, ny, nz = g.shape
        d = g.cell_nm
        self.ex = np.zeros((nx, ny + 1, nz + 1))
        self.ey = np.zeros((nx + 1, ny, nz + 1))
        self.ez = np.zeros((nx + 1, ny + 1, nz))
        self.hx = np.zeros((nx + 1, ny, nz))
        self.hy = np.zeros((nx, ny + 1, nz))
        self.hz = np.zeros((nx, ny, nz + 1))
        self.eps = {c: permittivity(lay, c) for c in ("Ex", "Ey", "Ez")}
        dt = g.dt
        self.ca = {c: dt / e for c, e in self.eps.items()}
        self._init_pml()
        self.inv_dx = 1.0 / d
        self.dt_dx = dt / d
        self.omegas = 2 * math.pi / self.wavelengths
        self._init_monitors(tuple(extra_boxes))

    # -- setup ---------------------------------------------------------------

    def _init_pml(self):
        g = self.lay.grid
        d, dt, npml = g.cell_nm, g.dt, g.pml_cells
        sigma_max = PML_SIGMA_SCALE * (PML_ORDER + 1) / d
        alpha_max = 0.1 * self.source.omega0
        prof = {}
        for ax, n in zip("xyz", g.shape):
            for kind, half in (("e", False), ("h", True)):
                prof[kind + ax] = K.pml_profiles(n, npml, d, dt, sigma_max, PML_KAPPA_MAX, alpha_max,
                                                 PML_ORDER, half)
        self.prof = prof
        nx, ny, nz = g.shape

        def count(key):
            return int((prof[key][3] >= 0).sum())

        self.psi = {
            "ex_y": np.zeros((nx, count("ey"), nz + 1)), "ex_z": np.zeros((nx, ny + 1, count("ez"))),
            "ey_z": np.zeros((nx + 1, ny, count("ez"))), "ey_x": np.zeros((count("ex"), ny, nz + 1)),
            "ez_x": np.zeros((count("ex"), ny + 1, nz)), "ez_y": np.zeros((nx + 1, count("ey"), nz)),
            "hx_y": np.zeros((nx + 1, count("hy"), nz)), "hx_z": np.zeros((nx + 1, ny, count("hz"))),
            "hy_z": np.zeros((nx, ny + 1, count("hz"))), "hy_x": np.zeros((count("hx"), ny + 1, nz)),
            "hz_x": np.zeros((count("hx"), ny, nz + 1)), "hz_y": np.zeros((nx, count("hy"), nz + 1)),
        }

    def _box_faces(self, box):
        nl = self.wavelengths.size
        i0, i1, j0, j1, k0, k1 = box
        ex, ey, ez, hx, hy, hz = self.ex, self.ey, self.ez, self.hx, self.hy, self.hz
        e, h = _e_plane, _h_pair
        faces = {}
        for name, i in (("x0", i0), ("x1", i1)):
            faces[name] = {
                "E1": PlaneDft(e(ey[i, j0:j1, k0:k1 + 1]), nl, 1.0),          # Ey (j+1/2, k)
                "E2": PlaneDft(e(ez[i, j0:j1 + 1, k0:k1]), nl, 1.0),          # Ez (j, k+1/2)
                "H1": PlaneDft(h(hz[i - 1, j0:j1, k0:k1 + 1], hz[i, j0:j1, k0:k1 + 1]), nl, 0.5),
                "H2": PlaneDft(h(hy[i - 1, j0:j1 + 1, k0:k1], hy[i, j0:j1 + 1, k0:k1]), nl, 0.5),
            }
        for name, j in (("y0", j0), ("y1", j1)):
            faces[name] = {
                "E1": PlaneDft(e(ez[i0:i1 + 1, j, k0:k1]), nl, 1.0),          # Ez (i, k+1/2)
                "E2": PlaneDft(e(ex[i0:i1, j, k0:k1 + 1]), nl, 1.0),          # Ex (i+1/2, k)
                "H1": PlaneDft(h(hx[i0:i1 + 1, j - 1, k0:k1], hx[i0:i1 + 1, j, k0:k1]), nl, 0.5),
                "H2": PlaneDft(h(hz[i0:i1, j - 1, k0:k1 + 1], hz[i0:i1, j, k0:k1 + 1]), nl, 0.5),
            }
        for name, k in (("z0", k0), ("z1", k1)):
            faces[name] = {
                "E1": PlaneDft(e(ex[i0:i1, j0:j1 + 1, k]), nl, 1.0),          # Ex (i+1/2, j)
                "E2": PlaneDft(e(ey[i0:i1 + 1, j0:j1, k]), nl, 1.0),          # Ey (i, j+1/2)
                "H1": PlaneDft(h(hy[i0:i1, j0:j1 + 1, k - 1], hy[i0:i1, j0:j1 + 1, k]), nl, 0.5),
                "H2": PlaneDft(h(hx[i0:i1 + 1, j0:j1, k - 1], hx[i0:i1 + 1, j0:j1, k]), nl, 0.5),
            }
        return faces

    def _init_monitors(self, extra_boxes):
        lay = self.lay
        nl = self.wavelengths.size
        ex, ey, ez, hx, hy, hz = self.ex, self.ey, self.ez, self.hx, self.hy, self.hz
        e, h = _e_plane, _h_pair
        self.faces = self._box_faces(lay.box)
        self.extra_faces = [self._box_faces(b) for b in extra_boxes]
        self.top = None
        if lay.top_plane_k >= 0:
            k = lay.top_plane_k
            a0, a1, b0, b1 = lay.lateral_range
            self.top = {
                "Ex": PlaneDft(e(ex[a0:a1, b0:b1 + 1, k]), nl, 1.0),
                "Ey": PlaneDft(e(ey[a0:a1 + 1, b0:b1, k]), nl, 1.0),
                "Hy": PlaneDft(h(hy[a0:a1, b0:b1 + 1, k - 1], hy[a0:a1, b0:b1 + 1, k]), nl, 0.5),
                "Hx": PlaneDft(h(hx[a0:a1 + 1, b0:b1, k - 1], hx[a0:a1 + 1, b0:b1, k]), nl, 0.5),
            }
        i, j, k = lay.dipole_node
        arr = {"Ex": ex, "Ey": ey, "Ez": ez}[lay.dipole_component]
        self.dipole_view = arr[i:i + 1, j:j + 1, k]
        self.dipole_dft = PlaneDft(e(self.dipole_view), nl, 1.0)
        self.src_dft = np.zeros(nl, dtype=complex)

    # -- stepping ------------------------------------------------------------

    def _step_h(self):
        p, s = self.prof, self.psi
        K.update_hx(self.hx, self.ey, self.ez, self.dt_dx, p["hy"][0], p["hz"][0], p["hy"][1], p["hy"][2],
                    p["hz"][1], p["hz"][2], p["hy"][3], p["hz"][3], s["hx_y"], s["hx_z"])
        K.update_hy(self.hy, self.ex, self.ez, self.dt_dx, p["hz"][0], p["hx"][0], p["hz"][1], p["hz"][2],
                    p["hx"][1], p["hx"][2], p["hz"][3], p["hx"][3], s["hy_z"], s["hy_x"])
        K.update_hz(self.hz, self.ex, self.ey, self.dt_dx, p["hx"][0], p["hy"][0], p["hx"][1], p["hx"][2],
                    p["hy"][1], p["hy"][2], p["hx"][3], p["hy"][3], s["hz_x"], s["hz_y"])

    def _step_e(self):
        p, s, c = self.prof, self.psi, self.ca
        K.update_ex(self.ex, self.hy, self.hz, c["Ex"], self.inv_dx, p["ey"][0], p["ez"][0], p["ey"][1],
                    p["ey"][2], p["ez"][1], p["ez"][2], p["ey"][3], p["ez"][3], s["ex_y"], s["ex_z"])
        K.update_ey(self.ey, self.hx, self.hz, c["Ey"], self.inv_dx, p["ez"][0], p["ex"][0], p["ez"][1],
                    p["ez"][2], p["ex"][1], p["ex"][2], p["ez"][3], p["ex"][3], s["ey_z"], s["ey_x"])
        K.update_ez(self.ez, self.hx, self.hy, c["Ez"], self.inv_dx, p["ex"][0], p["ey"][0], p["ex"][1],
                    p["ex"][2], p["ey"][1], p["ey"][2], p["ex"][3], p["ey"][3], s["ez_x"], s["ez_y"])

    def energy(self) -> float:
        """Field energy density sum (eps E^2 + H^2) over the whole grid, times cell volume / 2."""
        tot = 0.0
        for arr, comp in ((self.ex, "Ex"), (self.ey, "Ey"), (self.ez, "Ez")):
            tot += K.weighted_sum_squares(arr, self.eps[comp])
        for arr in (self.hx, self.hy, self.hz):
            tot += K.sum_squares(arr)
        return 0.5 * tot * self.lay.grid.cell_nm**3

    def run(self, decay: float = 1e-7, check_every: int = 25, growth_limit: float = 1e4,
            max_steps: int | None = None) -> RunResult:
        """Step until the source is off and the field energy has decayed by
        ``decay`` relative to its peak, or until max_steps.

        Raises InstabilityError on non-finite fields or on energy growth far
        beyond the peak reached while the source was on.
        """
        prev = nb.get_num_threads()
        nb.set_num_threads(min(self.threads, nb.config.NUMBA_NUM_THREADS))
        try:
            return self._run(decay, check_every, growth_limit, max_steps)
        finally:
            nb.set_num_threads(prev)

    def _run(self, decay, check_every, growth_limit, max_steps):
        lay = self.lay
        g = lay.grid
        dt = g.dt
        d3 = g.cell_nm**3
        n_max = g.max_steps if max_steps is None else int(max_steps)
        i, j, k = lay.dipole_node
        comp = lay.dipole_component
        arr = {"Ex": self.ex, "Ey": self.ey, "Ez": self.ez}[comp]
        ca_src = self.ca[comp][i, j, k]
        monitors = [m for f in self.faces.values() for m in f.values()]
        monitors += [m for faces in self.extra_faces for f in faces.values() for m in f.values()]
        if self.top is not None:
            monitors += list(self.top.values())
        monitors.append(self.dipole_dft)
        peak = 0.0
        energy = 0.0
        trace = []
        n = 0
        decayed = False
        for n in range(n_max):
            self._step_h()
            t_h = (n + 0.5) * dt
            s = float(self.source(t_h))
            if s != 0.0:
                # E^{n+1} = E^n + dt/eps (curl H - J) with J = s / dx^3 on one node
                arr[i, j, k] -= ca_src * s / d3
            self._step_e()
            ph_e = np.exp(1j * self.omegas * (n + 1.0) * dt) * dt
            ph_h = np.exp(1j * self.omegas * t_h) * dt
            self.src_dft += s * ph_h
            cre, cie = ph_e.real.copy(), ph_e.imag.copy()
            crh, cih = ph_h.real.copy(), ph_h.imag.copy()
            for m in monitors:
                if m.time_offset == 1.0:
                    m.accumulate(cre, cie)
                else:
                    m.accumulate(crh, cih)
            if (n + 1) % check_every == 0:
                energy = self.energy()
                trace.append((n + 1, energy))
                if not math.isfinite(energy):
                    raise InstabilityError(n + 1, "non-finite field values")
                t_now = (n + 1) * dt
                if t_now <= self.source.end_time:
                    peak = max(peak, energy)
                elif peak > 0 and energy > growth_limit * peak:
                    raise InstabilityError(n + 1, f"field energy grew to {energy / peak:.3g} x its source-on peak")
                elif energy <= decay * peak:
                    decayed = True
                    break
        box = {name: {c: m.value for c, m in f.items()} for name, f in self.faces.items()}
        extra = [{name: {c: m.value for c, m in f.items()} for name, f in faces.items()}
                 for faces in self.extra_faces]
        top = {c: m.value for c, m in self.top.items()} if self.top is not None else None
        return RunResult(lay, self.wavelengths.copy(), self.src_dft.copy(), box, top,
                         self.dipole_dft.value[:, 0, 0], n + 1, True, peak, energy, decayed, trace, extra)

    # -- debugging output ------------------------------------------------------

    def dump_snapshot(self, path):
        """Binary dump: magic, u16 version, u16 field count, then per field a
        2-byte name, three u32 dims and little-endian f32 data."""
        fields = (("Ex", self.ex), ("Ey", self.ey), ("Ez", self.ez),
                  ("Hx", self.hx), ("Hy", self.hy), ("Hz", self.hz))
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sHH", SNAPSHOT_MAGIC, SNAPSHOT_VERSION, len(fields)))
            for name, a in fields:
                fh.write(struct.pack("<2s3I", name.encode(), *a.shape))
                fh.write(a.astype("<f4").tobytes(order="C"))


def read_snapshot(path) -> dict:
    out = {}
    with open(path, "rb") as fh:
        magic, version, count = struct.unpack("<4sHH", fh.read(8))
        if magic != SNAPSHOT_MAGIC:
            raise FdtdError(f"bad snapshot magic {magic!r}")
        if version != SNAPSHOT_VERSION:
            raise FdtdError(f"unsupported snapshot version {version}")
        for _ in range(count):
            name, nx, ny, nz = struct.unpack("<2s3I", fh.read(14))
            data = np.frombuffer(fh.read(4 * nx * ny * nz), dtype="<f4").reshape(nx, ny, nz)
            out[name.decode()] = data
    return out
