"""Three-level emitter photophysics.

Levels are 1 (ground), 2 (excited) and 3 (metastable shelf).  Allowed
transitions: 1->2 at the pump rate, 2->1 radiative, 2->3 shelving and
3->1 deshelving.  Rates are in 1/ns, times in ns and optical powers in uW.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np


class EmitterError(ValueError):
    pass


@dataclass(frozen=True)
class EmitterParams:
    pump_rate: float
    radiative_rate: float
    shelving_rate: float = 0.0
    deshelving_rate: float = 0.0

    def __post_init__(self):
        rates = self.as_array()
        if not np.all(np.isfinite(rates)):
            raise EmitterError(f"non-finite rate in {self}")
        if np.any(rates < 0):
            raise EmitterError(f"negative rate in {self}")
        if self.radiative_rate <= 0:
            raise EmitterError("radiative_rate must be > 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.pump_rate, self.radiative_rate,
                         self.shelving_rate, self.deshelving_rate], dtype=float)

    def with_pump(self, pump_rate: float) -> "EmitterParams":
        return EmitterParams(pump_rate, self.radiative_rate,
                             self.shelving_rate, self.deshelving_rate)

    @property
    def max_rate(self) -> float:
        return float(self.as_array().max())

    @property
    def total_rate(self) -> float:
        return float(self.as_array().sum())


@dataclass(frozen=True)
class PumpModel:
    """Linear map from optical power (uW) to pump rate (1/ns)."""

    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise EmitterError("sigma must be positive and finite")

    def rate(self, power_uw):
        return self.sigma * power_uw

    def power(self, rate):
        return rate / self.sigma


@dataclass(frozen=True)
class Populations:
    p1: float
    p2: float
    p3: float

    def __post_init__(self):
        vals = (self.p1, self.p2, self.p3)
        if any(v < -1e-15 or v > 1 + 1e-15 for v in vals):
            raise EmitterError(f"population out of [0, 1]: {vals}")
        if abs(sum(vals) - 1.0) > 1e-12:
            raise EmitterError(f"populations do not sum to 1: {vals}")

    def as_array(self) -> np.ndarray:
        return np.array([self.p1, self.p2, self.p3])


def rate_matrix(params: EmitterParams) -> np.ndarray:
    """Generator Q with dp/dt = Q @ p for p = (p1, p2, p3)."""
    r, g, k23, k31 = params.as_array()
    return np.array([
        [-r, g, k31],
        [r, -(g + k23), 0.0],
        [0.0, k23, -k31],
    ])


def steady_state(params: EmitterParams) -> Populations:
    r, g, k23, k31 = params.as_array()
    if k23 == 0.0:
        return Populations(g / (r + g), r / (r + g), 0.0)
    if k31 == 0.0:
        # shelf is a trap unless nothing is ever excited
        return Populations(0.0, 0.0, 1.0) if r > 0.0 else Populations(1.0, 0.0, 0.0)
    # null vector of the generator from its cofactors
    w = np.array([k31 * (g + k23), r * k31, r * k23])
    p = w / w.sum()
    return Populations(float(p[0]), float(p[1]), float(1.0 - p[0] - p[1]))


def _reduced_system(params: EmitterParams):
    """(p1, p2) dynamics after eliminating p3 = 1 - p1 - p2: dx/dt = A x + b."""
    r, g, k23, k31 = params.as_array()
    A = np.array([[-(r + k31), g - k31],
                  [r, -(g + k23)]])
    b = np.array([k31, 0.0])
    return A, b


def _eigen_2x2(A):
    trace = A[0, 0] + A[1, 1]
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    disc = trace * trace / 4.0 - det
    return trace, det, disc


def _expm_coefficients(trace, disc, tau):
    """c0, c1 with exp(A tau) = c0 I + c1 (A - trace/2 I).

    Works for real, confluent and complex-conjugate eigenvalue pairs.
    """
    tau = np.asarray(tau, dtype=float)
    half = trace / 2.0
    env = np.exp(half * tau)
    if abs(disc) < 1e-14 * trace * trace:
        return env, env * tau
    if disc > 0:
        s = math.sqrt(disc)
        e1 = np.exp((half + s) * tau)
        e2 = np.exp((half - s) * tau)
        return 0.5 * (e1 + e2), 0.5 * (e1 - e2) / s
    w = math.sqrt(-disc)
    return env * np.cos(w * tau), env * np.sin(w * tau) / w


def g2_analytic(params: EmitterParams, tau):
    """Normalized intensity correlation of the three-level emitter.

    Equal to p2(|tau|) for an emitter reset to the ground state at zero
    delay, divided by the steady-state excited population.
    """
    pss = steady_state(params)
    if pss.p2 <= 0.0:
        raise EmitterError("no steady-state emission (p2 = 0); g2 undefined")
    A, _ = _reduced_system(params)
    trace, _, disc = _eigen_2x2(A)
    t = np.abs(np.asarray(tau, dtype=float))
    c0, c1 = _expm_coefficients(trace, disc, t)
    # deviation from steady state at tau = 0 for the ground-state start
    d1 = 1.0 - pss.p1
    d2 = -pss.p2
    half = trace / 2.0
    row = (A[1, 0] * d1 + (A[1, 1] - half) * d2)
    p2_dev = c0 * d2 + c1 * row
    return 1.0 + p2_dev / pss.p2


def g2_coefficients(params: EmitterParams):
    """(lambda_dip, lambda_shelf, C) with
    g2 = 1 - (1 + C) exp(lambda_dip |tau|) + C exp(lambda_shelf |tau|).

    Only defined when the reduced rate matrix has real, distinct eigenvalues.
    """
    A, _ = _reduced_system(params)
    trace, _, disc = _eigen_2x2(A)
    if disc <= 1e-14 * trace * trace:
        raise EmitterError("eigenvalues are degenerate or complex")
    pss = steady_state(params)
    lam_dip, lam_shelf = _dip_and_shelf(params, trace, disc)
    # g2(0) = 0 and g2'(0) = r / p2ss fix the two amplitudes
    slope = params.pump_rate / pss.p2
    # g2'(0) = -(1+C) lam_dip + C lam_shelf
    c = (slope + lam_dip) / (lam_shelf - lam_dip)
    return lam_dip, lam_shelf, c


def _dip_and_shelf(params, trace, disc):
    s = math.sqrt(disc)
    fast = trace / 2.0 - s
    slow = trace / 2.0 + s
    r, g, _, k31 = params.as_array()
    # for k23 -> 0 the eigenvalues are -(r + g) and -k31
    if r + g >= k31:
        return fast, slow
    return slow, fast


def antibunching_rate(params: EmitterParams) -> float:
    """Decay rate of the antibunching dip, |lambda_dip| (1/ns)."""
    A, _ = _reduced_system(params)
    trace, _, disc = _eigen_2x2(A)
    if disc <= 1e-14 * trace * trace:
        return -trace / 2.0
    lam_dip, _ = _dip_and_shelf(params, trace, disc)
    return -lam_dip


@nb.njit(cache=True)
def _rk4_three_level(q, p0, grid, h_max):
    out = np.empty((grid.shape[0], 3))
    p = p0.copy()
    t = 0.0
    k1 = np.empty(3)
    k2 = np.empty(3)
    k3 = np.empty(3)
    k4 = np.empty(3)
    tmp = np.empty(3)
    for n in range(grid.shape[0]):
        span = grid[n] - t
        if span > 0.0:
            nsub = int(math.ceil(span / h_max - 1e-12))
            if nsub < 1:
                nsub = 1
            h = span / nsub
            for _ in range(nsub):
                for i in range(3):
                    k1[i] = q[i, 0] * p[0] + q[i, 1] * p[1] + q[i, 2] * p[2]
                for i in range(3):
                    tmp[i] = p[i] + 0.5 * h * k1[i]
                for i in range(3):
                    k2[i] = q[i, 0] * tmp[0] + q[i, 1] * tmp[1] + q[i, 2] * tmp[2]
                for i in range(3):
                    tmp[i] = p[i] + 0.5 * h * k2[i]
                for i in range(3):
                    k3[i] = q[i, 0] * tmp[0] + q[i, 1] * tmp[1] + q[i, 2] * tmp[2]
                for i in range(3):
                    tmp[i] = p[i] + h * k3[i]
                for i in range(3):
                    k4[i] = q[i, 0] * tmp[0] + q[i, 1] * tmp[1] + q[i, 2] * tmp[2]
                for i in range(3):
                    p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            t = grid[n]
        out[n, 0] = p[0]
        out[n, 1] = p[1]
        out[n, 2] = p[2]
    return out


def integrate_populations(params: EmitterParams, tau_grid, p0=(1.0, 0.0, 0.0),
                          step_factor=0.01):
    """Fixed-step RK4 integration of the rate equations.

    Returns an array of shape (len(tau_grid), 3).  The step is
    min(step_factor / max_rate, grid spacing), shrunk so every grid point
    is hit exactly.
    """
    grid = np.asarray(tau_grid, dtype=float)
    if grid.ndim != 1 or np.any(grid < 0) or np.any(np.diff(grid) < 0):
        raise EmitterError("tau_grid must be sorted and non-negative")
    h_max = step_factor / params.max_rate
    out = _rk4_three_level(rate_matrix(params), np.asarray(p0, dtype=float), grid, h_max)
    if not np.all(np.isfinite(out)):
        raise EmitterError("RK4 integration produced non-finite values")
    return out


def g2_ode_oracle(params: EmitterParams, tau_grid):
    """Brute-force g2 from RK4 integration starting in the ground state."""
    pss = steady_state(params)
    if pss.p2 <= 0.0:
        raise EmitterError("no steady-state emission (p2 = 0); g2 undefined")
    return integrate_populations(params, tau_grid)[:, 1] / pss.p2


def saturation_curve(P, I_sat, P_sat, bg_slope=0.0):
    """Detected count rate I_sat / (1 + P_sat / P) + bg_slope * P."""
    P = np.asarray(P, dtype=float)
    out = I_sat * P / (P + P_sat) + bg_slope * P
    return out if out.ndim else float(out)


def saturation_parameters(params: EmitterParams, pump: PumpModel, efficiency=1.0):
    """(I_sat in counts/s, P_sat in uW) implied by the rates and pump model.

    The steady-state emission rate of the three-level model has exactly
    the saturation form in the pump rate.
    """
    _, g, k23, k31 = params.as_array()
    if k23 > 0 and k31 == 0:
        return 0.0, float("inf")
    shelf = k23 / k31 if k23 > 0 else 0.0
    i_sat = efficiency * g / (1.0 + shelf) * 1e9
    p_sat = (g + k23) / ((1.0 + shelf) * pump.sigma)
    return i_sat, p_sat


def emission_rate(params: EmitterParams) -> float:
    """Steady-state photon emission rate (1/ns)."""
    return params.radiative_rate * steady_state(params).p2
