"""Grid specification, scene description and their placement on the Yee grid.

Units: lengths in nm, time in nm of light travel (c = eps0 = mu0 = 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

COURANT_LIMIT = 0.99 / math.sqrt(3.0)
MIN_PML = 8

# lateral and vertical padding defaults (nm)
DEFAULT_LATERAL_NM = 1200.0
DEFAULT_SUBSTRATE_NM = 300.0
DEFAULT_AIR_NM = 250.0


class FdtdError(ValueError):
    pass


class InstabilityError(RuntimeError):
    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class GridSpec:
    cell_nm: float
    shape: tuple  # cells (nx, ny, nz), absorbing layers included
    courant: float = COURANT_LIMIT
    pml_cells: int = 10
    max_steps: int = 10000
    allow_unstable: bool = False  # diagnostics only: skip the Courant check

    def __post_init__(self):
        if not self.cell_nm > 0:
            raise FdtdError("cell_nm must be > 0")
        if len(self.shape) != 3 or any(int(n) != n or n < 1 for n in self.shape):
            raise FdtdError("shape must be three positive integers")
        if not self.courant > 0:
            raise FdtdError("courant must be > 0")
        if self.courant > COURANT_LIMIT * (1 + 1e-12) and not self.allow_unstable:
            raise FdtdError(f"Courant number {self.courant:.4f} exceeds {COURANT_LIMIT:.4f}")
        if self.pml_cells < MIN_PML:
            raise FdtdError(f"need at least {MIN_PML} PML cells")
        if any(n < 2 * self.pml_cells + 4 for n in self.shape):
            raise FdtdError("domain too small for the absorbing layers")
        if self.max_steps < 1:
            raise FdtdError("max_steps must be >= 1")

    @property
    def dt(self) -> float:
        return self.courant * self.cell_nm

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class Scene:
    """Structure plus dipole.

    kind: "nanowire" (cylinder on a substrate half-space), "bulk" (half-space
    only) or "homogeneous" (uniform index everywhere).  The dipole position
    is given relative to a reference point: the wire axis at half height for
    nanowires, the point ``depth_nm`` below the surface for bulk, and the
    domain centre for homogeneous scenes.
    """

    kind: str = "nanowire"
    radius_nm: float = 100.0
    height_nm: float = 2000.0
    n_structure: float = 2.4
    n_substrate: float = 2.4
    n_background: float = 1.0
    depth_nm: float = 1000.0
    polarization: str = "s"
    dipole_offset_nm: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("nanowire", "bulk", "homogeneous"):
            raise FdtdError(f"unknown scene kind {self.kind!r}")
        if self.polarization not in ("s", "p"):
            raise FdtdError("polarization must be 's' or 'p'")
        for name in ("n_structure", "n_substrate", "n_background"):
            if not getattr(self, name) >= 1.0:
                raise FdtdError(f"{name} must be >= 1")
        if self.kind == "nanowire":
            if not (self.radius_nm > 0 and self.height_nm > 0):
                raise FdtdError("nanowire needs positive radius and height")
            dx, dy, dz = self.dipole_offset_nm
            if math.hypot(dx, dy) > self.radius_nm or abs(dz) > self.height_nm / 2:
                raise FdtdError("dipole must sit inside the nanowire")
        if self.kind == "bulk":
            if not self.depth_nm > 0:
                raise FdtdError("bulk dipole depth must be > 0")
            if self.dipole_offset_nm[2] >= self.depth_nm:
                raise FdtdError("dipole must sit inside the substrate")

    def with_polarization(self, pol: str) -> "Scene":
        return replace(self, polarization=pol)

    @property
    def dipole_index(self) -> float:
        """Refractive index at the dipole."""
        if self.kind == "nanowire":
            return self.n_structure
        return self.n_substrate if self.kind == "bulk" else self.n_background


@dataclass
class Layout:
    """A scene placed on a grid: where the structure, dipole and monitors are."""

    grid: GridSpec
    scene: Scene
    axis_xy: tuple  # lateral reference point (nm)
    surface_z: float  # substrate top (nm); -inf for homogeneous
    top_z: float  # highest structure point (nm)
    dipole_node: tuple  # (i, j, k) of the driven E component
    dipole_component: str
    box: tuple  # flux box planes (i0, i1, j0, j1, k0, k1)
    top_plane_k: int  # far-field plane (E-node plane index), -1 if none
    lateral_range: tuple  # (i0, i1, j0, j1) of the far-field plane
    extra: dict = field(default_factory=dict)

    def dipole_position_nm(self):
        i, j, k = self.dipole_node
        d = self.grid.cell_nm
        off = {"Ex": (0.5, 0, 0), "Ey": (0, 0.5, 0), "Ez": (0, 0, 0.5)}[self.dipole_component]
        return ((i + off[0]) * d, (j + off[1]) * d, (k + off[2]) * d)


def _component_offset(comp):
    return {"Ex": (0.5, 0.0, 0.0), "Ey": (0.0, 0.5, 0.0), "Ez": (0.0, 0.0, 0.5),
            "Hx": (0.0, 0.5, 0.5), "Hy": (0.5, 0.0, 0.5), "Hz": (0.5, 0.5, 0.0)}[comp]


def component_coords(comp, shape, d):
    """1-D coordinate vectors (nm) of a field component."""
    nx, ny, nz = shape
    ox, oy, oz = _component_offset(comp)
    sizes = {"Ex": (nx, ny + 1, nz + 1), "Ey": (nx + 1, ny, nz + 1), "Ez": (nx + 1, ny + 1, nz),
             "Hx": (nx + 1, ny, nz), "Hy": (nx, ny + 1, nz), "Hz": (nx, ny, nz + 1)}[comp]
    return tuple((np.arange(n) + o) * d for n, o in zip(sizes, (ox, oy, oz)))


def layout(scene: Scene, cell_nm: float = 637.0 / 20.0 / 2.4, lateral_nm: float = DEFAULT_LATERAL_NM,
           substrate_nm: float = DEFAULT_SUBSTRATE_NM, air_nm: float = DEFAULT_AIR_NM,
           pml_cells: int = 10, courant: float = COURANT_LIMIT, max_steps: int = 10000,
           box_half_cells: int = 6, top_gap_cells: int = 3, allow_unstable: bool = False,
           height_nm: float | None = None) -> Layout:
    """Choose a grid for ``scene`` and place structure, dipole and monitors.

    The structure axis sits at the lateral centre of the domain.  Cell
    counts are chosen so that the driven dipole node falls exactly on the
    axis and the grid is mirror symmetric about it: an x-directed (s)
    dipole needs an odd nx and even ny, a z-directed (p) dipole even nx and
    ny.  ``height_nm`` is the interior height for homogeneous scenes.
    """
    d = float(cell_nm)
    pol = scene.polarization
    comp = "Ex" if pol == "s" else "Ez"
    n_lat = max(int(round(lateral_nm / d)), 2 * box_half_cells + 4) + 2 * pml_cells
    nx = n_lat + (1 - n_lat % 2) if pol == "s" else n_lat + n_lat % 2
    ny = n_lat + n_lat % 2
    xc, yc = nx * d / 2.0, ny * d / 2.0
    ox, oy, oz = scene.dipole_offset_nm

    if scene.kind == "nanowire":
        bottom = pml_cells * d + substrate_nm
        surface = bottom
        top = surface + scene.height_nm
        nz = int(math.ceil((top + air_nm) / d)) + pml_cells
        z_dip = surface + scene.height_nm / 2.0 + oz
    elif scene.kind == "bulk":
        surface = pml_cells * d + scene.depth_nm + substrate_nm
        top = surface
        nz = int(math.ceil((surface + air_nm) / d)) + pml_cells
        z_dip = surface - scene.depth_nm + oz
    else:
        h = lateral_nm if height_nm is None else height_nm
        nz = int(round(h / d)) + 2 * pml_cells
        surface = -math.inf
        top = -math.inf
        z_dip = nz * d / 2.0 + oz
    grid = GridSpec(d, (int(nx), int(ny), int(nz)), courant, pml_cells, max_steps, allow_unstable)

    cx, cy, cz = _component_offset(comp)
    i = int(round((xc + ox) / d - cx))
    j = int(round((yc + oy) / d - cy))
    k = int(round(z_dip / d - cz))
    node = (i, j, k)

    b = box_half_cells
    # box planes on E nodes around the dipole; the half-cell offset of the
    # driven component is split so the box stays centred
    i0, i1 = (i - b, i + b + 1) if comp == "Ex" else (i - b, i + b)
    j0, j1 = j - b, j + b
    k0, k1 = (k - b, k + b + 1) if comp == "Ez" else (k - b, k + b)
    box = (i0, i1, j0, j1, k0, k1)
    lo, his = pml_cells + 1, (nx - pml_cells - 1, ny - pml_cells - 1, nz - pml_cells - 1)
    if min(i0, j0, k0) < lo or i1 > his[0] or j1 > his[1] or k1 > his[2]:
        raise FdtdError("flux box reaches into the absorbing layers")

    if scene.kind == "homogeneous":
        top_k = -1
    else:
        top_k = int(math.ceil(top / d)) + top_gap_cells
        if top_k > nz - pml_cells - 1:
            raise FdtdError("far-field plane falls inside the absorbing layer; add air above the structure")
    lat = (pml_cells, nx - pml_cells, pml_cells, ny - pml_cells)
    return Layout(grid, scene, (xc, yc), surface, top, node, comp, box, top_k, lat)


def grow_box(lay: Layout, cells: int) -> tuple:
    """The flux box enlarged by ``cells`` on every side; must stay clear of the absorbers."""
    i0, i1, j0, j1, k0, k1 = lay.box
    c = int(cells)
    box = (i0 - c, i1 + c, j0 - c, j1 + c, k0 - c, k1 + c)
    g = lay.grid
    lo = g.pml_cells + 1
    hi = tuple(n - g.pml_cells - 1 for n in g.shape)
    if min(box[0], box[2], box[4]) < lo or box[1] > hi[0] or box[3] > hi[1] or box[5] > hi[2]:
        raise FdtdError("enlarged flux box reaches into the absorbing layers")
    return box


def permittivity(lay: Layout, comp: str) -> np.ndarray:
    """Relative permittivity sampled at the nodes of one E component (staircase)."""
    sc = lay.scene
    d = lay.grid.cell_nm
    x, y, z = component_coords(comp, lay.grid.shape, d)
    X = x[:, None, None]
    Y = y[None, :, None]
    Z = z[None, None, :]
    eps_bg = sc.n_background**2
    out = np.full((x.size, y.size, z.size), eps_bg)
    if sc.kind == "homogeneous":
        return out
    below = np.broadcast_to(Z <= lay.surface_z, out.shape)
    out[below] = sc.n_substrate**2
    if sc.kind == "nanowire":
        r2 = (X - lay.axis_xy[0]) ** 2 + (Y - lay.axis_xy[1]) ** 2
        inside = (r2 <= sc.radius_nm**2) & (Z >= lay.surface_z) & (Z <= lay.top_z)
        out[np.broadcast_to(inside, out.shape)] = sc.n_structure**2
    return out
