"""Fitting procedures for antibunching, saturation and lifetime data."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .emitter import EmitterParams, antibunching_rate, g2_analytic, saturation_curve
from .hbt import G2Estimate
from .lsq import FitError, FitResult, least_squares, multistart

RATE_NAMES = ["pump_rate", "radiative_rate", "shelving_rate", "deshelving_rate"]
G2_NAMES = RATE_NAMES + ["signal_fraction"]
G2_UNITS = {n: "1/ns" for n in RATE_NAMES} | {"signal_fraction": ""}


@dataclass(frozen=True)
class G2Model:
    params: EmitterParams
    signal_fraction: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.signal_fraction <= 1.0:
            raise FitError("signal_fraction must lie in [0, 1]")

    def as_vector(self) -> np.ndarray:
        return np.append(self.params.as_array(), self.signal_fraction)

    @classmethod
    def from_vector(cls, v) -> "G2Model":
        return cls(EmitterParams(*map(float, v[:4])), float(min(max(v[4], 0.0), 1.0)))

    def __call__(self, tau):
        return g2_measured(tau, self.params, self.signal_fraction)


def g2_measured(tau, params: EmitterParams, rho: float):
    """Background-diluted correlation 1 + rho^2 (g2_ideal - 1)."""
    return 1.0 + rho * rho * (g2_analytic(params, tau) - 1.0)


def _g2_vector_model(tau, v):
    return g2_measured(tau, EmitterParams(*v[:4]), v[4])


def _half_recovery(est: G2Estimate):
    """(g2 near zero delay, delay where the dip has recovered half way to 1)."""
    tau = np.abs(est.tau)
    order = np.argsort(tau, kind="stable")
    tau_s = tau[order]
    g_s = est.g2[order]
    g0 = float(np.clip(np.mean(g_s[:2]), 0.0, 0.95))
    # light smoothing so single empty bins do not set the crossing
    k = max(1, min(5, g_s.size // 20))
    smooth = np.convolve(g_s, np.ones(k) / k, mode="valid")
    above = np.flatnonzero(smooth >= 1.0 - 0.5 * (1.0 - g0))
    t_half = float(tau_s[above[0]]) if above.size else float(tau_s[-1]) / 4.0
    step = float(np.min(np.diff(np.unique(tau_s)))) if np.unique(tau_s).size > 1 else 1.0
    return g0, max(t_half, 0.5 * step)


# The curve depends on the rates only through S = r + Gamma + k23, k31 and
# r * k23.  The first fitting stage works in (S, k31, x, rho) with
# r * k23 = x S^2 / 4, 0 < x < 1, which covers every valid rate set once.

INV_NAMES = ["total_rate", "deshelving_rate", "shelf_mix", "signal_fraction"]


def invariants(params: EmitterParams):
    """(S, k31, x) of a rate set."""
    r, g, k23, k31 = params.as_array()
    S = r + g + k23
    return S, k31, 4.0 * r * k23 / (S * S)


def _symmetric_rates(S, k31, x) -> EmitterParams:
    return EmitterParams(0.5 * S, 0.5 * S * (1.0 - x), 0.5 * S * x, k31)


def _inv_model(tau, v):
    return g2_measured(tau, _symmetric_rates(v[0], v[1], v[2]), v[3])


def gauge_rates(S, k31, x, gauge: str, value: float) -> tuple[EmitterParams, bool]:
    """Rates with the given invariants and one rate pinned near ``value``.

    Returns (params, adjusted); adjusted is True when ``value`` was outside
    the feasible interval and had to be clipped into it.
    """
    P = 0.25 * x * S * S
    if gauge == "pump_rate" or gauge == "shelving_rate":
        # r and k23 are the two pinned-product partners; Gamma > 0 needs
        # the pinned one strictly between the roots of u^2 - S u + P
        half = 0.5 * S
        root = np.sqrt(max(half * half - P, 0.0))
        lo, hi = half - root, half + root
        eps = 1e-9 * S
        u = float(np.clip(value, lo + eps, hi - eps))
        # an unresolved shelf drives P to zero; keep the partner rate positive
        other = max(P / u, 1e-12 * S)
        r, k23 = (u, other) if gauge == "pump_rate" else (other, u)
        g = S - r - k23
        return EmitterParams(r, max(g, 1e-300), k23, k31), not lo + eps <= value <= hi - eps
    if gauge == "radiative_rate":
        # r + k23 = S - Gamma and r k23 = P need (S - Gamma)^2 >= 4 P
        g_max = S - 2.0 * np.sqrt(P)
        g = float(np.clip(value, 1e-12 * S, g_max * (1 - 1e-12)))
        m = 0.5 * (S - g)
        root = np.sqrt(max(m * m - P, 0.0))
        return EmitterParams(m + root, g, m - root, k31), g != value
    raise FitError(f"cannot pin {gauge!r}; choose pump_rate, radiative_rate or shelving_rate")


def _g2_chi2(model: G2Model, est: G2Estimate, sig) -> float:
    try:
        return float(np.sum(((model(est.tau) - est.g2) / sig) ** 2))
    except ValueError:
        return np.inf


def g2_candidates(est: G2Estimate, n_best: int = 5):
    """Best-scoring starting points from a coarse grid over the curve's
    identifiable rate combinations."""
    g0, t_half = _half_recovery(est)
    rho0 = float(np.clip(np.sqrt(1.0 - g0), 0.2, 0.99))
    R = np.log(2.0) / t_half
    sig = est.sigma()
    scored = []
    for S in R * np.array([0.5, 1.0, 2.0]):
        for k31 in R * np.array([0.003, 0.01, 0.03, 0.1]):
            for x in (0.003, 0.03, 0.2, 0.6, 0.9):
                for rho in sorted({rho0, 0.7, 0.95}):
                    cand = G2Model(_symmetric_rates(S, k31, x), rho)
                    scored.append((_g2_chi2(cand, est, sig), len(scored), cand))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [c for _, _, c in scored[:n_best]]


def guess_g2(est: G2Estimate) -> G2Model:
    """Starting point from dip depth and half-recovery delay, refined by a
    coarse chi2 scan."""
    return g2_candidates(est, 1)[0]


def _better(a: FitResult, b: FitResult) -> bool:
    """Lower chi2 wins; near-ties go to the converged fit."""
    if abs(a.chi2 - b.chi2) <= 1e-9 * max(b.chi2, 1e-300):
        return a.converged and not b.converged
    return a.chi2 < b.chi2


def fit_g2(est: G2Estimate, guess: G2Model | None = None, gauge: str = "pump_rate",
           fixed=(), tau_window: float | None = None, n_starts: int = 1, seed: int = 0,
           gauge_value: float | None = None) -> FitResult:
    """Fit the diluted three-level model to a normalized g2 estimate.

    The curve pins down k31, r + Gamma + k23 and r * k23 but not how the
    last two split between r, Gamma and k23, so one rate (``gauge``) keeps
    its guessed value (or ``gauge_value``); the default is the pump rate,
    which is normally known from the pump power.  ``fixed`` may additionally hold
    deshelving_rate or signal_fraction.

    Stage one fits the gauge-free invariants from the guess (or, without a
    guess, from the five best grid candidates).  Stage two maps the best
    point back to rates and polishes in rate space, which supplies the
    rate covariance.
    """
    bad = set(fixed) - {"deshelving_rate", "signal_fraction"}
    if bad:
        raise FitError(f"only deshelving_rate and signal_fraction can be fixed, not {sorted(bad)}")
    mask = np.ones(est.tau.size, dtype=bool)
    if tau_window is not None:
        mask &= np.abs(est.tau) <= tau_window
    sub = G2Estimate(est.tau[mask], est.g2[mask], est.g2_err[mask], est.counts[mask], est.scale)
    sig = sub.sigma()
    starts = [guess] if guess is not None else g2_candidates(sub, 5)
    kw1 = dict(names=INV_NAMES, transforms=["log", "log", "logit", "logit"], fixed=tuple(fixed))
    stage1 = None
    for start in starts:
        S, k31, x = invariants(start.params)
        p0 = np.array([S, max(k31, 1e-9), float(np.clip(x, 1e-9, 1 - 1e-9)),
                       float(np.clip(start.signal_fraction, 1e-6, 1 - 1e-6))])
        if n_starts > 1:
            cur = multistart(_inv_model, sub.tau, sub.g2, sig, p0, n_starts=n_starts, seed=seed, **kw1)
        else:
            cur = least_squares(_inv_model, sub.tau, sub.g2, sig, p0, **kw1)
        if stage1 is None or _better(cur, stage1):
            stage1 = cur
    S, k31, x, rho = stage1.params
    hint = getattr(guess.params if guess is not None else starts[0].params, gauge, None)
    if hint is None:
        raise FitError(f"unknown gauge rate {gauge!r}")
    if gauge_value is not None:
        hint = float(gauge_value)
    elif guess is None and gauge == "pump_rate":
        hint = 0.5 * S
    rates, adjusted = gauge_rates(S, max(k31, 1e-12 * S), x, gauge, hint)
    p0 = np.append(rates.as_array(), float(np.clip(rho, 1e-12, 1 - 1e-12)))
    res = least_squares(_g2_vector_model, sub.tau, sub.g2, sig, p0, names=G2_NAMES,
                        transforms=["log"] * 4 + ["logit"], fixed=(gauge,) + tuple(fixed), units=G2_UNITS)
    if res.chi2 > stage1.chi2 * (1 + 1e-6) + 1e-12:
        # polishing should never lose ground; fall back to the mapped point
        res.params, res.chi2 = p0, stage1.chi2
    res.converged = res.converged and stage1.converged
    if not stage1.converged:
        res.message = f"invariant stage: {stage1.message}; rate stage: {res.message}"
    res.flags = sorted(set(res.flags) | set(stage1.flags))
    if adjusted:
        res.flags.append("gauge_clipped")
    model = G2Model.from_vector(res.params)
    res.extra.update(
        dip_rate=float(antibunching_rate(model.params)),
        dip_rate_err=_dip_rate_error(res),
        g2_zero=float(model(0.0)),
        g2_max=float(model(np.linspace(0.0, float(np.abs(sub.tau).max()), 2001)).max()),
        total_rate=float(S), deshelving_rate=float(k31), pump_shelf_product=float(0.25 * x * S * S),
        gauge=gauge,
    )
    return res


def _dip_rate_error(res: FitResult) -> float:
    """Standard error of the antibunching rate from the rate covariance."""
    v = np.asarray(res.params, dtype=float)
    grad = np.zeros(v.size)
    for i in range(4):
        h = 1e-6 * max(abs(v[i]), 1e-12)
        if v[i] - h < 0:
            continue
        up, dn = v.copy(), v.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (antibunching_rate(EmitterParams(*up[:4])) - antibunching_rate(EmitterParams(*dn[:4]))) / (2 * h)
    var = float(grad @ np.asarray(res.covariance) @ grad)
    return math.sqrt(var) if var > 0 else 0.0


def g2_model_from_result(res: FitResult) -> G2Model:
    return G2Model.from_vector(res.params)


# -- saturation -------------------------------------------------------------

SAT_NAMES = ["I_sat", "P_sat"]


def _sat_model(P, v):
    return saturation_curve(P, v[0], v[1], 0.0)


def fit_saturation(P, counts, bg_P=None, bg_counts=None, sigma=None, bg_sigma=None) -> FitResult:
    """Background-subtracted saturation fit.

    The background slope comes from a weighted regression through the
    origin of the off-device points; it is then removed from the device
    counts before fitting I_sat and P_sat.  Counts are in counts/s, powers
    in uW; default uncertainties are Poisson for one-second dwell.
    """
    P = np.asarray(P, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if P.size < 3:
        raise FitError("need at least three on-device points")
    if bg_P is not None and len(bg_P):
        bg_P = np.asarray(bg_P, dtype=float)
        bg_counts = np.asarray(bg_counts, dtype=float)
        bs = np.sqrt(np.maximum(bg_counts, 1.0)) if bg_sigma is None else np.asarray(bg_sigma, float)
        wts = 1.0 / bs**2
        denom = float(np.sum(wts * bg_P**2))
        if denom <= 0:
            raise FitError("background powers must not all be zero")
        slope = float(np.sum(wts * bg_P * bg_counts) / denom)
        slope_var = 1.0 / denom
    else:
        slope, slope_var = 0.0, 0.0
    net = counts - slope * P
    sig = np.sqrt(np.maximum(counts, 1.0)) if sigma is None else np.asarray(sigma, dtype=float)
    # background uncertainty propagates into each net point
    sig = np.sqrt(sig**2 + slope_var * P**2)

    i0 = float(np.max(net)) * 1.2
    order = np.argsort(P)
    Ps, ns = P[order], net[order]
    half = np.flatnonzero(ns >= 0.5 * i0)
    p_half = float(Ps[half[0]]) if half.size else float(Ps[-1])
    p0 = np.array([max(i0, 1e-9), max(p_half, 1e-9)])
    res = least_squares(_sat_model, P, net, sig, p0, names=SAT_NAMES, transforms=["log", "log"],
                        units={"I_sat": "counts/s", "P_sat": "uW"})
    if not res.converged:
        res = multistart(_sat_model, P, net, sig, p0, names=SAT_NAMES, transforms=["log", "log"],
                         units={"I_sat": "counts/s", "P_sat": "uW"})
    # extend with the background slope
    res.names = res.names + ["bg_slope"]
    res.params = np.append(res.params, slope)
    cov = np.zeros((3, 3))
    cov[:2, :2] = res.covariance
    cov[2, 2] = slope_var
    res.covariance = cov
    res.units["bg_slope"] = "counts/s/uW"
    if P.max() < res["P_sat"] / 10.0:
        res.flags.append("ill_conditioned")
        res.message += "; all points far below saturation"
    return res


def brightness_ratio(nanowire: FitResult, bulk: FitResult) -> dict:
    return {
        "I_sat_ratio": nanowire["I_sat"] / bulk["I_sat"],
        "P_sat_ratio": bulk["P_sat"] / nanowire["P_sat"],
    }


# -- lifetime ---------------------------------------------------------------

def _line(P, v):
    return v[0] + v[1] * P


def fit_lifetime(P, R, sigma_R, p_sat: float | None = None) -> FitResult:
    """Weighted straight line R = Gamma + sigma * P; lifetime = 1 / Gamma.

    With p_sat given, only powers below p_sat / 2 are used when at least
    two distinct powers remain there.
    """
    P = np.asarray(P, dtype=float)
    R = np.asarray(R, dtype=float)
    s = np.broadcast_to(np.asarray(sigma_R, dtype=float), R.shape)
    if p_sat is not None:
        low = P < p_sat / 2.0
        if np.unique(P[low]).size >= 2:
            P, R, s = P[low], R[low], s[low]
    if np.unique(P).size < 2:
        raise FitError("need at least two distinct pump powers (singular design matrix)")
    # closed-form weighted regression as the starting point
    w = 1.0 / s**2
    X = np.column_stack([np.ones_like(P), P])
    beta = np.linalg.solve(X.T @ (w[:, None] * X), X.T @ (w * R))
    res = least_squares(_line, P, R, s, beta, names=["Gamma", "sigma"],
                        units={"Gamma": "1/ns", "sigma": "1/(ns uW)"})
    g, ge = res["Gamma"], res.error("Gamma")
    if g <= 0:
        res.flags.append("unphysical")
        res.message += "; negative zero-power intercept"
        res.extra.update(lifetime_ns=float("nan"), lifetime_err_ns=float("nan"))
    else:
        res.extra.update(lifetime_ns=1.0 / g, lifetime_err_ns=ge / g**2)
    return res
