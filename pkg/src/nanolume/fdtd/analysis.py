"""Post-processing of DFT monitor data: radiated power, Purcell factor,
far-field angular distribution and collection efficiency."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import trapezoid

from .engine import RunResult
from .grid import FdtdError, Layout, Scene, component_coords, permittivity

# in-plane (s) and axial (p) weights for dipoles spread uniformly over the
# plane normal to a <111> axis, viewed along <100>
POL_WEIGHTS = {"s": 2.0 / 3.0, "p": 1.0 / 3.0}
DEFAULT_BAND_NM = (637.0, 780.0)


@dataclass
class PowerSpectrum:
    wavelengths: np.ndarray
    total: np.ndarray  # closed-box Poynting flux per unit |current moment|^2
    joule: np.ndarray  # -1/2 Re(E . J*) at the source, same normalization

    def mismatch(self) -> np.ndarray:
        return np.abs(self.total - self.joule) / np.abs(self.joule)


def _trap(n, ends):
    w = np.ones(n)
    if ends:
        w[0] = w[-1] = 0.5
    return w


def _pair_flux(e1, h1, e2, h2, trap1, trap2):
    """Integral of Re(E1 H1* - E2 H2*)/2 over a face (cell area excluded).

    trap1/trap2 say which of the two in-plane axes of each pair sit on
    node lines (trapezoid end weights) rather than cell midlines.
    """
    def integ(e, h, trap):
        wa = _trap(e.shape[1], trap[0])
        wb = _trap(e.shape[2], trap[1])
        return np.einsum("lab,a,b->l", (e * np.conj(h)).real, wa, wb)
    return 0.5 * (integ(e1, h1, trap1) - integ(e2, h2, trap2))


# which in-plane axes are node lines for (E1, E2) on each face orientation
_FACE_TRAP = {"x": ((False, True), (True, False)),
              "y": ((True, False), (False, True)),
              "z": ((False, True), (True, False))}


def box_flux(res: RunResult, which: int | None = None) -> np.ndarray:
    """Net outward flux through the closed monitor box per wavelength,
    in units of the raw DFT amplitudes.  ``which`` picks one of the extra
    boxes instead of the main one."""
    d2 = res.layout.grid.cell_nm ** 2
    total = np.zeros(res.wavelengths.size)
    faces = res.box if which is None else res.extra_boxes[which]
    for name, f in faces.items():
        t1, t2 = _FACE_TRAP[name[0]]
        sign = 1.0 if name[1] == "1" else -1.0
        total += sign * _pair_flux(f["E1"], f["H1"], f["E2"], f["H2"], t1, t2) * d2
    return total


def radiated_power(res: RunResult) -> PowerSpectrum:
    """Radiated power per unit current-moment amplitude, by two routes:
    Poynting flux through the closed box and work done by the source."""
    s2 = np.abs(res.source_spectrum) ** 2
    if np.any(s2 == 0):
        raise FdtdError("source has no spectral content at a monitor wavelength")
    flux = box_flux(res) / s2
    joule = -0.5 * (res.dipole_e * np.conj(res.source_spectrum)).real / s2
    return PowerSpectrum(res.wavelengths.copy(), flux, joule)


def purcell(power: PowerSpectrum, reference: PowerSpectrum) -> np.ndarray:
    """F(lambda) = P_total / P_reference for runs with the same source."""
    if not np.array_equal(power.wavelengths, reference.wavelengths):
        raise FdtdError("Purcell factor needs a common wavelength grid")
    return power.total / reference.total


def reference_layout(lay: Layout, n: float | None = None) -> Layout:
    """Homogeneous calibration on the identical grid and dipole node.

    The index defaults to the index at the dipole."""
    n = lay.scene.dipole_index if n is None else float(n)
    sc = Scene(kind="homogeneous", n_background=n, polarization=lay.scene.polarization)
    return replace(lay, scene=sc, surface_z=-math.inf, top_z=-math.inf, top_plane_k=-1, extra={})


# -- far field -------------------------------------------------------------------

@dataclass
class FarField:
    theta_deg: np.ndarray
    phi_deg: np.ndarray  # periodic grid, endpoint excluded
    wavelengths: np.ndarray
    dp_domega: np.ndarray  # (n_lambda, n_theta, n_phi), per unit |current moment|^2
    plane_flux: np.ndarray  # upward Poynting flux through the monitor plane
    propagating_flux: np.ndarray  # same, restricted to |k_par| < k0 (Parseval route)

    def power_within(self, theta_max_deg: float) -> np.ndarray:
        """Integral of dP/dOmega over the cone theta <= theta_max."""
        th = np.radians(self.theta_deg)
        keep = self.theta_deg <= theta_max_deg + 1e-9
        dphi = math.radians(self.phi_deg[1] - self.phi_deg[0]) if self.phi_deg.size > 1 else 2 * math.pi
        ring = self.dp_domega.sum(axis=2) * dphi  # periodic in phi
        return trapezoid(ring[:, keep] * np.sin(th[keep]), th[keep], axis=1)

    @property
    def upward(self) -> np.ndarray:
        return self.power_within(90.0)


def na_angle_deg(na: float) -> float:
    if not 0 < na <= 1:
        raise FdtdError("NA must lie in (0, 1]")
    return math.degrees(math.asin(na))


def _plane_fields(res: RunResult):
    lay = res.layout
    if res.top is None or lay.top_plane_k < 0:
        raise FdtdError("run has no far-field monitor plane")
    d = lay.grid.cell_nm
    z = lay.top_plane_k * d
    if z <= lay.top_z:
        raise FdtdError("far-field plane lies inside the structure")
    a0, a1, b0, b1 = lay.lateral_range
    k = lay.top_plane_k
    for comp in ("Ex", "Ey"):
        eps = permittivity(lay, comp)
        sl = eps[a0:a1 + (comp == "Ey"), b0:b1 + (comp == "Ex"), k]
        if not np.all(sl == 1.0):
            raise FdtdError("far-field plane lies inside a dielectric; it must sit in air")
    return res.top, d


def _phase_matrix(coords, kvec):
    return np.exp(-1j * np.outer(kvec, coords))


def angular_power(ex, ey, ex_xy, ey_xy, d, wavelength, theta_deg, phi_deg) -> np.ndarray:
    """dP/dOmega on a (theta, phi) grid from sampled tangential E on a plane in air.

    ex, ey are complex amplitudes on their own sample lines (x, y vectors
    in ex_xy, ey_xy); d is the sample spacing.  Only |k_par| <= k0 is
    evaluated, so evanescent content never enters.
    """
    T, P = np.meshgrid(np.radians(theta_deg), np.radians(phi_deg), indexing="ij")
    k0 = 2 * math.pi / wavelength
    kx = (k0 * np.sin(T) * np.cos(P)).ravel()
    ky = (k0 * np.sin(T) * np.sin(P)).ravel()
    amps = []
    for f, (xv, yv) in ((ex, ex_xy), (ey, ey_xy)):
        X = _phase_matrix(xv, kx)  # (Q, Na)
        Y = _phase_matrix(yv, ky)  # (Q, Nb)
        amps.append(np.einsum("qa,ab,qb->q", X, f, Y, optimize=True) * d * d)
    ax, ay = amps
    cos2 = np.cos(T).ravel() ** 2
    val = cos2 * (np.abs(ax) ** 2 + np.abs(ay) ** 2) + np.abs(kx * ax + ky * ay) ** 2 / k0**2
    return (k0**2 / (2 * (2 * math.pi) ** 2) * val).reshape(T.shape)


def far_field(res: RunResult, dtheta_deg: float = 0.5, dphi_deg: float = 2.0, extra_theta_deg=(),
              pad: int = 8) -> FarField:
    """Angular spectrum of the top-plane tangential E field.

    dP/dOmega = k0^2 / (2 (2 pi)^2) [cos^2(t) (|Ex|^2 + |Ey|^2) + |kx Ex + ky Ey|^2 / k0^2]
    with Ex, Ey the plane-wave amplitudes at k_par = k0 sin(t) (cos p, sin p).
    Evaluated as a direct sum over the Yee sample positions so both
    components keep their own half-cell offsets.
    """
    top, d = _plane_fields(res)
    lay = res.layout
    theta = np.arange(0.0, 90.0 + 1e-9, dtheta_deg)
    theta = np.unique(np.concatenate([theta, np.asarray(extra_theta_deg, dtype=float)]))
    phi = np.arange(0.0, 360.0 - 1e-9, dphi_deg)
    shape = lay.grid.shape
    a0, a1, b0, b1 = lay.lateral_range
    xs = {c: component_coords(c, shape, d) for c in ("Ex", "Ey")}
    x_ex, y_ex = xs["Ex"][0][a0:a1], xs["Ex"][1][b0:b1 + 1]
    x_ey, y_ey = xs["Ey"][0][a0:a1 + 1], xs["Ey"][1][b0:b1]
    xc, yc = lay.axis_xy
    s2 = np.abs(res.source_spectrum) ** 2
    out = np.empty((res.wavelengths.size, theta.size, phi.size))
    for li, lam in enumerate(res.wavelengths):
        out[li] = angular_power(top["Ex"][li], top["Ey"][li], (x_ex - xc, y_ex - yc), (x_ey - xc, y_ey - yc),
                                d, lam, theta, phi) / s2[li]
    plane, prop = plane_flux(top, d, res.wavelengths, pad)
    return FarField(theta, phi, res.wavelengths.copy(), out, plane / s2, prop / s2)


def plane_flux(top: dict, d: float, wavelengths, pad: int = 8):
    """Upward flux through a plane in air: (total, part with |k_par| < k0).

    ``top`` maps Ex, Ey, Hx, Hy to (n_lambda, a, b) arrays.  Ex/Hy and
    Ey/Hx are co-located pairs, so their zero-padded transforms can be
    multiplied directly (Parseval) regardless of the half-cell offsets.
    """
    wavelengths = np.asarray(wavelengths, dtype=float)
    nl = wavelengths.size
    total = np.zeros(nl)
    prop = np.zeros(nl)
    for (e, h, sign) in (("Ex", "Hy", 1.0), ("Ey", "Hx", -1.0)):
        E, H = top[e], top[h]
        total += sign * 0.5 * (E * np.conj(H)).real.sum(axis=(1, 2)) * d * d
        na, nb = E.shape[1:]
        ma, mb = pad * na, pad * nb
        Ef = np.fft.fft2(E, s=(ma, mb))
        Hf = np.fft.fft2(H, s=(ma, mb))
        kx = 2 * math.pi * np.fft.fftfreq(ma, d)
        ky = 2 * math.pi * np.fft.fftfreq(mb, d)
        kp2 = kx[:, None] ** 2 + ky[None, :] ** 2
        for li, lam in enumerate(wavelengths):
            k0 = 2 * math.pi / lam
            mask = kp2 < k0 * k0
            cross = (Ef[li] * np.conj(Hf[li])).real
            prop[li] += sign * 0.5 * cross[mask].sum() / (ma * mb) * d * d
    return total, prop


def collection_efficiency(ff: FarField, power: PowerSpectrum, na: float = 0.95) -> np.ndarray:
    """Fraction of the total emitted power that leaves upward inside the NA cone."""
    if not np.array_equal(ff.wavelengths, power.wavelengths):
        raise FdtdError("far field and power use different wavelength grids")
    th = na_angle_deg(na)
    if not np.any(np.isclose(ff.theta_deg, th)):
        raise FdtdError("far-field theta grid must contain the NA angle; pass it via extra_theta_deg")
    eta = ff.power_within(th) / power.total
    return np.clip(eta, 0.0, 1.0)


def spectral_weights(wavelengths, table=None, band_nm=DEFAULT_BAND_NM) -> np.ndarray:
    """Normalized quadrature weights on the wavelength grid.

    Default: uniform over ``band_nm``.  ``table`` is an optional (lambda_nm,
    weight) pair of arrays, linearly interpolated (zero outside)."""
    lam = np.asarray(wavelengths, dtype=float)
    if lam.size == 1:
        return np.ones(1)
    if np.any(np.diff(lam) <= 0):
        raise FdtdError("wavelength grid must be strictly increasing")
    if table is None:
        w = ((lam >= band_nm[0] - 1e-9) & (lam <= band_nm[1] + 1e-9)).astype(float)
    else:
        tl, tw = (np.asarray(v, dtype=float) for v in table)
        if np.any(tw < 0):
            raise FdtdError("spectral weights must be >= 0")
        w = np.interp(lam, tl, tw, left=0.0, right=0.0)
    # trapezoid quadrature on the (possibly non-uniform) grid
    q = np.zeros_like(lam)
    dl = np.diff(lam)
    q[:-1] += 0.5 * dl
    q[1:] += 0.5 * dl
    w = w * q
    if w.sum() <= 0:
        raise FdtdError("spectral weights vanish on the wavelength grid")
    return w / w.sum()


def nv_average(eta_s, eta_p, wavelengths_s, wavelengths_p=None, weights=None) -> float:
    """Polarization (2/3 s, 1/3 p) then spectrally weighted mean of a per-lambda quantity."""
    ls = np.asarray(wavelengths_s, dtype=float)
    lp = ls if wavelengths_p is None else np.asarray(wavelengths_p, dtype=float)
    es, ep = np.asarray(eta_s, dtype=float), np.asarray(eta_p, dtype=float)
    if ls.shape != lp.shape or not np.array_equal(ls, lp) or es.shape != ls.shape or ep.shape != ls.shape:
        raise FdtdError("s and p results must share one wavelength grid")
    w = spectral_weights(ls) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != ls.shape:
        raise FdtdError("weights must match the wavelength grid")
    mix = POL_WEIGHTS["s"] * es + POL_WEIGHTS["p"] * ep
    return float(np.sum(w * mix) / np.sum(w))
