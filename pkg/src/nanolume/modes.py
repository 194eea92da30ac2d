"""Step-index cylindrical waveguide: V-number and the fundamental hybrid
HE11 mode from the full-vector characteristic equation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

# first zero of J0, the single-mode cutoff
J0_FIRST_ZERO = 2.404825557695773


class ModeError(ValueError):
    pass


@dataclass(frozen=True)
class WaveguideSpec:
    radius_nm: float
    n_core: float = 2.4
    n_clad: float = 1.0
    wavelength_nm: float = 637.0

    def __post_init__(self):
        vals = (self.radius_nm, self.n_core, self.n_clad, self.wavelength_nm)
        if not all(math.isfinite(v) for v in vals):
            raise ModeError("waveguide parameters must be finite")
        if self.radius_nm <= 0 or self.wavelength_nm <= 0:
            raise ModeError("radius and wavelength must be > 0")
        if not self.n_core > self.n_clad >= 1.0:
            raise ModeError("need n_core > n_clad >= 1")

    @property
    def k0(self) -> float:
        return 2.0 * math.pi / self.wavelength_nm


@dataclass(frozen=True)
class ModeSolution:
    n_eff: float
    beta: float  # 1/nm
    m: int = 1
    label: str = "HE11"
    residual: float = 0.0
    near_cutoff: bool = False
    u: float = float("nan")  # core transverse parameter
    w: float = float("nan")  # cladding decay parameter; stays > 0 when n_eff rounds to n_clad


def v_number(spec: WaveguideSpec) -> float:
    return spec.k0 * spec.radius_nm * math.sqrt(spec.n_core**2 - spec.n_clad**2)


def bessel_kernel(m: int, kind: str, x):
    """(value, derivative, exponent) of J_m or K_m at x.

    J is returned unscaled with exponent 0.  K is returned as
    K_m(x) e^x and K_m'(x) e^x with exponent -x, so the true values are
    value * exp(exponent); this keeps large arguments finite.
    """
    if m not in (0, 1):
        raise ModeError("only orders 0 and 1 are supported")
    x = np.asarray(x, dtype=float)
    if kind == "J":
        if np.any(x < 0):
            raise ModeError("J kernel needs x >= 0")
        return special.jv(m, x), special.jvp(m, x), np.zeros_like(x)
    if kind == "K":
        if np.any(x <= 0):
            raise ModeError("K kernel needs x > 0")
        k = special.kve(m, x)
        # K0' = -K1, K1' = -K0 - K1 / x
        dk = -special.kve(1, x) if m == 0 else -special.kve(0, x) - k / x
        return k, dk, -x
    raise ModeError(f"unknown Bessel kind {kind!r}")


def _uw(spec: WaveguideSpec, n_eff):
    k0a = spec.k0 * spec.radius_nm
    u = k0a * np.sqrt(np.maximum(spec.n_core**2 - n_eff**2, 0.0))
    w = k0a * np.sqrt(np.maximum(n_eff**2 - spec.n_clad**2, 0.0))
    return u, w


def _char_uw(spec: WaveguideSpec, u, w, m: int = 1):
    # at the extreme ends of the scan the terms overflow; callers skip non-finite values
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        j, dj, _ = bessel_kernel(m, "J", u)
        k, dk, _ = bessel_kernel(m, "K", w)
        ratio = (spec.n_clad / spec.n_core) ** 2
        kh = dk / (w * k)
        a = dj / u
        lhs = (a + kh * j) * (a + ratio * kh * j)
        rhs = m * m * (1.0 / u**2 + 1.0 / w**2) * (1.0 / u**2 + ratio / w**2) * j * j
        return lhs - rhs, j


def characteristic(spec: WaveguideSpec, n_eff, m: int = 1):
    """Hybrid-mode dispersion function for azimuthal order m.

    (Jh + Kh)(Jh + (n2/n1)^2 Kh) - m^2 (1/U^2 + 1/W^2)(1/U^2 + (n2/n1)^2 / W^2)
    with Jh = J_m'(U) / (U J_m(U)) and Kh = K_m'(W) / (W K_m(W)), multiplied
    through by J_m(U)^2 so it stays continuous across the zeros of J_m.
    The scaled K values cancel in Kh.
    """
    u, w = _uw(spec, np.asarray(n_eff, dtype=float))
    return _char_uw(spec, u, w, m)[0]


def _char_w(spec, w, m=1):
    V = v_number(spec)
    u = np.sqrt(np.maximum(V * V - w * w, 0.0))
    return _char_uw(spec, u, w, m)


def n_eff_from_w(spec: WaveguideSpec, w) -> float:
    return float(np.sqrt(spec.n_clad**2 + (w / (spec.k0 * spec.radius_nm)) ** 2))


def solve_he11(spec: WaveguideSpec, n_scan: int = 400, tol: float = 1e-12) -> ModeSolution:
    """Largest-n_eff root of the m=1 characteristic equation in (n_clad, n_core).

    The search runs over the cladding decay parameter W in (0, V), which
    resolves roots that sit exponentially close to n_clad at small V.  A
    scan (log-spaced near W = 0, uniform in U elsewhere) locates the upper-most sign
    change; bisection narrows it to the floating-point limit and the root
    is accepted when the residual, normalized by J_1(U)^2, is below ``tol``
    or at the floor set by its floating-point neighbours.
    """
    V = v_number(spec)
    # roots are spaced about pi apart in U, so the main scan is uniform in U
    u_grid = np.linspace(0.0, V, max(n_scan, int(V / 0.02)) + 1)[1:]
    w_main = np.sqrt(np.maximum(V * V - u_grid * u_grid, 0.0))
    grid = np.unique(np.concatenate([V * np.logspace(-300, -3, 300), w_main[w_main > 0]]))
    f, _ = _char_w(spec, grid)
    bracket = None
    for i in range(grid.size - 1, 0, -1):
        a, b = f[i - 1], f[i]
        if np.isfinite(a) and np.isfinite(b) and a * b <= 0 and not (a == 0 and b == 0):
            bracket = [grid[i - 1], grid[i]]
            break
    if bracket is None:
        raise ModeError(f"no HE11 sign change found for {spec}")
    lo, hi = bracket
    flo = float(_char_w(spec, lo)[0])
    fhi = float(_char_w(spec, hi)[0])
    if not flo * fhi <= 0:
        raise ModeError("bracket does not straddle a sign change")
    geometric = hi / lo > 4.0
    for _ in range(2000):
        mid = math.sqrt(lo * hi) if geometric and hi / lo > 4.0 else 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        fm = float(_char_w(spec, mid)[0])
        if fm == 0.0:
            lo = hi = mid
            break
        if flo * fm < 0:
            hi = mid
        else:
            lo, flo = mid, fm

    def norm_resid(w):
        val, j = _char_w(spec, w)
        return abs(float(val / (j * j)))

    res = [norm_resid(lo), norm_resid(hi)]
    w = (lo, hi)[int(np.argmin(res))]
    resid = min(res)
    if resid >= tol:
        floor = max(norm_resid(np.nextafter(w, 0.0)), norm_resid(np.nextafter(w, V)))
        if resid > floor:
            raise ModeError(f"root refinement stalled with residual {resid:.3e}")
    n_eff = n_eff_from_w(spec, w)
    near = (n_eff - spec.n_clad) < 1e-9
    u = math.sqrt(max(V * V - w * w, 0.0))
    return ModeSolution(n_eff, spec.k0 * n_eff, 1, "HE11", float(resid), bool(near), u, float(w))


def mode_table(radii_nm, wavelengths_nm, n_core=2.4, n_clad=1.0):
    rows = []
    for a in radii_nm:
        for lam in wavelengths_nm:
            spec = WaveguideSpec(float(a), n_core, n_clad, float(lam))
            sol = solve_he11(spec)
            rows.append({"a_nm": float(a), "lambda_nm": float(lam), "V": v_number(spec), "n_eff": sol.n_eff})
    return rows


def write_mode_table(path, rows, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["a_nm", "lambda_nm", "V", "n_eff"])
        for r in rows:
            w.writerow([f"{r['a_nm']:.6g}", f"{r['lambda_nm']:.6g}", f"{r['V']:.10f}", f"{r['n_eff']:.12f}"])
