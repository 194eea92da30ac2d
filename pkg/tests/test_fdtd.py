import math
from dataclasses import replace

import numpy as np
import pytest

from nanolume.fdtd import analysis as A
from nanolume.fdtd import antenna as T
from nanolume.fdtd.engine import RunResult, Simulation, Source, read_snapshot
from nanolume.fdtd.grid import (
    COURANT_LIMIT,
    FdtdError,
    GridSpec,
    InstabilityError,
    Scene,
    grow_box,
    layout,
    permittivity,
)
from nanolume.fdtd.io import read_csv_table, write_far_field_csv, write_spectrum_csv

import oracles
from conftest import SMALL_WIRE, small_config


def analytic(wavelengths, n=1.0):
    return np.array([oracles.dipole_power_homogeneous(1.0, lam, n) for lam in wavelengths])


def tiny_layout(**kw):
    return layout(Scene(kind="homogeneous"), cell_nm=40.0, lateral_nm=480.0, height_nm=480.0, box_half_cells=3,
                  **kw)


# -- grid and scene ---------------------------------------------------------------

def test_grid_validation():
    with pytest.raises(FdtdError):
        GridSpec(10.0, (40, 40, 40), courant=COURANT_LIMIT * 1.01)
    with pytest.raises(FdtdError):
        GridSpec(10.0, (40, 40, 40), pml_cells=7)
    with pytest.raises(FdtdError):
        GridSpec(10.0, (20, 40, 40))
    with pytest.raises(FdtdError):
        GridSpec(0.0, (40, 40, 40))
    assert COURANT_LIMIT == pytest.approx(0.99 / math.sqrt(3))


def test_scene_validation():
    with pytest.raises(FdtdError):
        Scene(kind="sphere")
    with pytest.raises(FdtdError):
        Scene(n_structure=0.5)
    with pytest.raises(FdtdError):
        Scene(dipole_offset_nm=(150.0, 0.0, 0.0))
    with pytest.raises(FdtdError):
        Scene(kind="bulk", depth_nm=100.0, dipole_offset_nm=(0.0, 0.0, 100.0))
    with pytest.raises(FdtdError):
        Scene(polarization="q")


def test_layout_places_dipole_on_axis_and_structure():
    for pol, comp in (("s", "Ex"), ("p", "Ez")):
        lay = T.place(Scene(polarization=pol), T.AntennaConfig())
        assert lay.dipole_component == comp
        x, y, z = lay.dipole_position_nm()
        assert x == pytest.approx(lay.axis_xy[0]) and y == pytest.approx(lay.axis_xy[1])
        assert abs(z - (lay.surface_z + 1000.0)) <= lay.grid.cell_nm
        eps = permittivity(lay, comp)
        assert eps[lay.dipole_node] == pytest.approx(2.4**2)
        # monitor plane above the wire, in air
        assert lay.top_plane_k * lay.grid.cell_nm > lay.top_z


def test_grow_box_rejects_pml():
    lay = tiny_layout()
    with pytest.raises(FdtdError):
        grow_box(lay, 50)


def test_monitor_wavelengths_must_be_in_band():
    with pytest.raises(FdtdError):
        Simulation(tiny_layout(), [1500.0])


# -- time stepping ------------------------------------------------------------------

def test_zero_source_keeps_fields_zero():
    sim = Simulation(tiny_layout(), [637.0], source=replace(Source.for_band(), amplitude=0.0))
    res = sim.run(max_steps=60)
    for a in (sim.ex, sim.ey, sim.ez, sim.hx, sim.hy, sim.hz):
        assert not np.any(a)
    assert res.final_energy == 0.0


def test_courant_violation_detected():
    lay = tiny_layout(courant=COURANT_LIMIT * 1.2, allow_unstable=True)
    with pytest.raises(InstabilityError) as exc:
        Simulation(lay, [637.0]).run(max_steps=4000)
    assert exc.value.step > 0


def test_late_energy_absorbed(vacuum_run):
    assert vacuum_run.decayed
    assert vacuum_run.final_energy < 1e-6 * vacuum_run.peak_energy


def test_snapshot_round_trip(tmp_path):
    sim = Simulation(tiny_layout(), [637.0])
    sim.run(max_steps=40)
    sim.dump_snapshot(tmp_path / "f.bin")
    assert (tmp_path / "f.bin").read_bytes()[:4] == b"NLFD"
    snap = read_snapshot(tmp_path / "f.bin")
    assert set(snap) == {"Ex", "Ey", "Ez", "Hx", "Hy", "Hz"}
    assert np.array_equal(snap["Ex"], sim.ex.astype(np.float32))
    (tmp_path / "g.bin").write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(FdtdError):
        read_snapshot(tmp_path / "g.bin")


# -- radiated power -----------------------------------------------------------------

def test_vacuum_power_matches_analytic(vacuum_run):
    p = A.radiated_power(vacuum_run)
    ref = analytic(p.wavelengths)
    assert np.all(np.abs(p.total / ref - 1) < 0.10)
    # the work done by the source is an independent route to the same power
    assert np.all(np.abs(p.joule / ref - 1) < 0.10)
    assert np.all(p.mismatch() < 0.02)


def test_flux_independent_of_box_size(vacuum_run):
    small = A.box_flux(vacuum_run)
    large = A.box_flux(vacuum_run, which=0)
    assert np.all(np.abs(large / small - 1) < 0.01)


def test_diamond_scales_with_index(diamond_pair):
    vac, dia = (A.radiated_power(r) for r in diamond_pair)
    assert np.all(np.abs(dia.total / (2.4 * vac.total) - 1) < 0.10)
    assert np.all(np.abs(dia.total / analytic(dia.wavelengths, 2.4) - 1) < 0.10)


def test_purcell_of_reference_is_one(vacuum_run):
    p = A.radiated_power(vacuum_run)
    assert np.array_equal(A.purcell(p, p), np.ones(p.wavelengths.size))
    other = A.PowerSpectrum(p.wavelengths[:2], p.total[:2], p.joule[:2])
    with pytest.raises(FdtdError):
        A.purcell(p, other)


def test_reference_layout_keeps_grid():
    lay = T.place(Scene(), T.AntennaConfig())
    ref = A.reference_layout(lay)
    assert ref.grid == lay.grid and ref.dipole_node == lay.dipole_node
    assert ref.scene.kind == "homogeneous" and ref.scene.n_background == 2.4
    assert np.all(permittivity(ref, "Ex") == 2.4**2)


# -- far field on constructed input --------------------------------------------------

def plane_grid(half_nm, d):
    x = np.arange(-half_nm, half_nm + 1e-9, d)
    return x, x


def test_plane_wave_single_peak():
    lam, d = 637.0, 20.0
    x, y = plane_grid(6000.0, d)
    th0, ph0 = 30.0, 40.0
    k0 = 2 * math.pi / lam
    kx = k0 * math.sin(math.radians(th0)) * math.cos(math.radians(ph0))
    ky = k0 * math.sin(math.radians(th0)) * math.sin(math.radians(ph0))
    # smooth aperture so side lobes do not mask the peak
    env = np.exp(-(x[:, None] ** 2 + y[None, :] ** 2) / 3000.0**2)
    phase = env * np.exp(1j * (kx * x[:, None] + ky * y[None, :]))
    # s-polarized: E perpendicular to the plane of incidence
    ex = -math.sin(math.radians(ph0)) * phase
    ey = math.cos(math.radians(ph0)) * phase
    theta = np.arange(0.0, 90.0, 1.0)
    phi = np.arange(0.0, 360.0, 2.0)
    dp = A.angular_power(ex, ey, (x, y), (x, y), d, lam, theta, phi)
    ti, pi = np.unravel_index(np.argmax(dp), dp.shape)
    assert theta[ti] == th0 and phi[pi] == ph0
    # far from the peak the pattern is negligible
    far = np.abs(theta[:, None] - th0) + np.abs(phi[None, :] - ph0) > 20
    assert dp[far].max() < 1e-3 * dp.max()


def gaussian_beam_plane(lam, d, w0, half, tilt_deg=0.0):
    """Tangential E and H of an upward Gaussian beam built from propagating plane waves."""
    x, y = plane_grid(half, d)
    X, Y = np.meshgrid(x, y, indexing="ij")
    k0 = 2 * math.pi / lam
    kt = k0 * math.sin(math.radians(tilt_deg))
    ex0 = np.exp(-(X**2 + Y**2) / w0**2) * np.exp(1j * kt * X)
    n = x.size
    kx = 2 * math.pi * np.fft.fftfreq(n, d)
    KX, KY = np.meshgrid(kx, kx, indexing="ij")
    kz2 = k0**2 - KX**2 - KY**2
    prop = kz2 > 0
    KZ = np.sqrt(np.where(prop, kz2, 1.0))
    Ex = np.fft.fft2(ex0) * prop
    Ey = np.zeros_like(Ex)
    Ez = -(KX * Ex + KY * Ey) / KZ
    # H = k x E / k0 in units with c = eps0 = mu0 = 1
    Hx = (KY * Ez - KZ * Ey) / k0
    Hy = (KZ * Ex - KX * Ez) / k0
    back = [np.fft.ifft2(F) for F in (Ex, Ey, Hx, Hy)]
    return x, {c: v[None] for c, v in zip(("Ex", "Ey", "Hx", "Hy"), back)}


def test_parseval_plane_flux_matches_hemisphere():
    lam, d = 637.0, 20.0
    for tilt in (0.0, 35.0):
        x, top = gaussian_beam_plane(lam, d, w0=900.0, half=4000.0, tilt_deg=tilt)
        total, prop = A.plane_flux(top, d, [lam], pad=2)
        theta = np.arange(0.0, 90.0 + 1e-9, 0.5)
        phi = np.arange(0.0, 360.0, 2.0)
        dp = A.angular_power(top["Ex"][0], top["Ey"][0], (x, x), (x, x), d, lam, theta, phi)
        ff = A.FarField(theta, phi, np.array([lam]), dp[None], total, prop)
        assert ff.upward[0] == pytest.approx(prop[0], rel=0.02)
        assert prop[0] == pytest.approx(total[0], rel=0.02)
        assert total[0] > 0


def test_evanescent_content_is_discarded():
    lam, d = 637.0, 20.0
    x, top = gaussian_beam_plane(lam, d, w0=900.0, half=3000.0)
    _, prop = A.plane_flux(top, d, [lam], pad=2)
    # a strongly evanescent ripple on E alone adds nothing to the propagating part
    env = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / 700.0**2)
    ripple = 0.5 * np.cos(2 * math.pi * x / 200.0)[:, None] * env
    top2 = dict(top, Ex=top["Ex"] + ripple[None])
    _, prop2 = A.plane_flux(top2, d, [lam], pad=2)
    assert prop2[0] == pytest.approx(prop[0], rel=1e-3)
    theta, phi = np.array([0.0, 30.0, 60.0]), np.array([0.0, 90.0])
    a = A.angular_power(top["Ex"][0], top["Ey"][0], (x, x), (x, x), d, lam, theta, phi)
    b = A.angular_power(top2["Ex"][0], top2["Ey"][0], (x, x), (x, x), d, lam, theta, phi)
    assert np.allclose(a, b, rtol=1e-6, atol=1e-6 * a.max())


def test_na_angle():
    assert A.na_angle_deg(0.95) == pytest.approx(71.805, abs=1e-3)
    with pytest.raises(FdtdError):
        A.na_angle_deg(1.2)


# -- averaging ----------------------------------------------------------------------

def test_polarization_weights_from_plane_average():
    e1 = np.array([1.0, -1.0, 0.0]) / math.sqrt(2)
    e2 = np.array([1.0, 1.0, -2.0]) / math.sqrt(6)
    axial = 0.5 * (e1[2] ** 2 + e2[2] ** 2)
    assert A.POL_WEIGHTS["p"] == pytest.approx(axial, abs=1e-15)
    assert A.POL_WEIGHTS["s"] + A.POL_WEIGHTS["p"] == 1.0
    # uniform directions in that plane give the same mean
    ang = np.linspace(0, 2 * math.pi, 3601)[:-1]
    ez = np.cos(ang) * e1[2] + np.sin(ang) * e2[2]
    assert np.mean(ez**2) == pytest.approx(axial, rel=1e-12)


def test_nv_average_constant_and_errors():
    lam = np.linspace(637, 780, 12)
    assert A.nv_average(np.full(12, 0.3), np.full(12, 0.3), lam) == pytest.approx(0.3, rel=1e-14)
    assert A.nv_average(np.ones(12), np.zeros(12), lam) == pytest.approx(2 / 3, rel=1e-14)
    with pytest.raises(FdtdError):
        A.nv_average(np.ones(12), np.ones(11), lam, lam[:11])
    with pytest.raises(FdtdError):
        A.nv_average(np.ones(12), np.ones(12), lam, lam + 1.0)


def test_spectral_weights():
    lam = np.array([600.0, 637.0, 700.0, 780.0, 800.0])
    w = A.spectral_weights(lam)
    assert w.sum() == pytest.approx(1.0) and w[0] == 0 and w[-1] == 0
    w2 = A.spectral_weights(lam, table=([600, 800], [1.0, 1.0]))
    assert np.all(w2 > 0)
    with pytest.raises(FdtdError):
        A.spectral_weights(lam[::-1])
    with pytest.raises(FdtdError):
        A.spectral_weights(lam, table=([600, 800], [-1.0, 1.0]))


# -- csv output ------------------------------------------------------------------------

def test_csv_writers(tmp_path):
    lam = np.array([637.0, 700.0])
    write_spectrum_csv(tmp_path / "s.csv", lam, [1.0, 2.0], None, [0.5, 0.4], header_lines=["seed 0"])
    tab = read_csv_table(tmp_path / "s.csv")
    assert list(tab) == ["lambda_nm", "P_total", "F_purcell", "eta_NA"]
    assert np.isnan(tab["F_purcell"]).all() and np.allclose(tab["eta_NA"], [0.5, 0.4])
    ff = A.FarField(np.array([0.0, 1.0]), np.array([0.0, 180.0]), lam, np.ones((2, 2, 2)), np.ones(2), np.ones(2))
    write_far_field_csv(tmp_path / "f.csv", ff)
    tab = read_csv_table(tmp_path / "f.csv")
    assert list(tab) == ["theta_deg", "phi_deg", "lambda_nm", "dP_dOmega"] and tab["theta_deg"].size == 8


# -- antenna scenes ------------------------------------------------------------------------

def test_far_field_plane_must_be_in_air():
    cfg = small_config(40.0, max_steps=5)
    lay = T.place(SMALL_WIRE, cfg)
    res = Simulation(lay, cfg.wavelengths_nm).run(max_steps=5)
    low = replace(res, layout=replace(lay, top_plane_k=int(lay.surface_z / lay.grid.cell_nm) + 2))
    with pytest.raises(FdtdError):
        A.far_field(low)
    sunk = replace(res, layout=replace(lay, top_z=lay.top_plane_k * lay.grid.cell_nm + 1.0))
    with pytest.raises(FdtdError):
        A.far_field(sunk)


def test_collection_efficiency_needs_na_angle(nanowire):
    s = nanowire["s"]
    ff = replace(s.far_field, theta_deg=s.far_field.theta_deg + 0.01)
    with pytest.raises(FdtdError):
        A.collection_efficiency(ff, s.power)
    assert np.all((s.eta >= 0) & (s.eta <= 1))


def test_nanowire_runs_are_sound(nanowire):
    for pol, r in nanowire.items():
        assert r.run.decayed, pol
        assert np.all(r.power.mismatch() < 0.03), pol
        assert np.all(r.far_field.dp_domega >= 0)
        # hemisphere integral against the plane's Poynting flux; the p dipole
        # sends more light out near grazing, where the finite plane truncates it
        tol = 0.02 if pol == "s" else 0.05
        assert np.all(np.abs(r.far_field.upward / r.far_field.plane_flux - 1) < tol), pol


def test_s_far_field_mirror_symmetry(nanowire):
    ff = nanowire["s"].far_field
    n = ff.phi_deg.size
    mirror = ff.dp_domega[:, :, (-np.arange(n)) % n]
    scale = ff.dp_domega.max(axis=(1, 2))[:, None, None]
    assert np.max(np.abs(mirror - ff.dp_domega) / scale) < 1e-6


def test_s_emission_mostly_inside_na_cone(nanowire):
    ff = nanowire["s"].far_field
    i637 = int(np.argmin(np.abs(ff.wavelengths - 637.0)))
    inside = ff.power_within(A.na_angle_deg(0.95))[i637]
    assert inside / ff.upward[i637] > 0.9


def test_p_dipole_suppressed_at_zpl(nanowire):
    p = nanowire["p"]
    i637 = int(np.argmin(np.abs(p.wavelengths - 637.0)))
    assert p.purcell[i637] < 1.0


def test_bulk_collection_small(bulk):
    assert T.averaged_eta(bulk) < 0.1


def test_bulk_translation_invariance():
    cfg = small_config(20.0)
    etas = []
    for off in ((0.0, 0.0), (60.0, -40.0)):
        r = T.simulate(Scene(kind="bulk", depth_nm=400.0, dipole_offset_nm=(off[0], off[1], 0.0)),
                       cfg, with_reference=False)
        etas.append(r.eta)
    assert np.all(np.abs(etas[1] / etas[0] - 1) < 0.02)


def test_convergence_trend():
    # the 100 nm radius is a whole number of cells at every step, so the
    # staircase outline refines instead of jumping between shapes
    etas = []
    for cell in (25.0, 12.5, 6.25):
        r = T.simulate(SMALL_WIRE, small_config(cell), with_reference=False)
        etas.append(r.eta)
    etas = np.array(etas)
    assert np.all(np.abs(etas[1] - etas[2]) < np.abs(etas[0] - etas[1]))
