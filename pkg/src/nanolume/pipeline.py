"""End-to-end workflows built from the emitter, stream, hbt, fit and fdtd
modules.  Configs are plain dicts with units in the key names."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fit as F
from .emitter import EmitterParams, PumpModel, emission_rate
from .hbt import CorrelationHistogram, DetectorModel, G2Estimate, measure_g2
from .lsq import FitError, FitResult
from .stream import StreamConfig, count_detected, detect, simulate_emissions, substream


class ConfigError(ValueError):
    pass


def _get(d, key, default=None, required=False):
    if key in d:
        return d[key]
    if required:
        raise ConfigError(f"missing config key {key!r}")
    return default


def derived_seed(seed: int, *key) -> int:
    """Stable 63-bit seed for a sub-run identified by key."""
    parts = []
    for k in key:
        parts.append(int(round(k * 1000)) if isinstance(k, float) else int(k))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(parts))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def emitter_from(cfg: dict, power_uw: float | None = None) -> tuple[EmitterParams, PumpModel | None]:
    em = _get(cfg, "emitter", required=True)
    gamma = float(_get(em, "radiative_rate_per_ns", required=True))
    k23 = float(_get(em, "shelving_rate_per_ns", 0.0))
    k31 = float(_get(em, "deshelving_rate_per_ns", 0.0))
    pump = None
    if "pump" in cfg:
        pump = PumpModel(float(_get(cfg["pump"], "sigma_per_ns_uw", required=True)))
    if "pump_rate_per_ns" in em:
        r = float(em["pump_rate_per_ns"])
    else:
        P = _get(cfg, "power_uw") if power_uw is None else power_uw
        if P is None or pump is None:
            raise ConfigError("need emitter.pump_rate_per_ns or power_uw with pump.sigma_per_ns_uw")
        if float(P) < 0:
            raise ConfigError("power_uw must be >= 0")
        r = pump.rate(float(P))
    return EmitterParams(r, gamma, k23, k31), pump


# -- g2 ------------------------------------------------------------------------

@dataclass
class G2Run:
    params: EmitterParams
    stream_config: StreamConfig
    histogram: CorrelationHistogram
    estimate: G2Estimate
    fit: FitResult
    detected_rate_per_s: float
    power_uw: float | None = None


def stream_config_from(cfg: dict, params: EmitterParams, seed: int) -> StreamConfig:
    st = _get(cfg, "stream", required=True)
    eff = float(_get(st, "detection_efficiency", 1.0))
    if "signal_fraction" in st and "background_rate_per_ns" in st:
        raise ConfigError("give either stream.signal_fraction or stream.background_rate_per_ns")
    if "signal_fraction" in st:
        rho = float(st["signal_fraction"])
        if not 0 < rho <= 1:
            raise ConfigError("signal_fraction must lie in (0, 1]")
        bg = eff * emission_rate(params) * (1.0 / rho - 1.0)
    else:
        bg = float(_get(st, "background_rate_per_ns", 0.0))
    return StreamConfig(float(_get(st, "duration_ns", required=True)), eff, bg,
                        float(_get(st, "dark_rate_per_ns", 0.0)), float(_get(st, "jitter_sigma_ns", 0.0)),
                        int(seed))


def run_g2(cfg: dict, seed: int, threads: int = 1, power_uw: float | None = None) -> G2Run:
    """emitter -> stream -> detect -> HBT -> fit."""
    params, _ = emitter_from(cfg, power_uw)
    sc = stream_config_from(cfg, params, seed)
    det_cfg = _get(cfg, "detector", {})
    model = DetectorModel(float(_get(det_cfg, "dead_time_ns", 0.0)), float(_get(det_cfg, "split_ratio", 0.5)))
    h = _get(cfg, "histogram", required=True)
    emissions = simulate_emissions(params, sc, threads=threads)
    tags = detect(emissions, sc, n_detectors=2)
    hist, est = measure_g2(tags, model, seed, float(h["bin_width_ns"]), float(h["tau_max_ns"]), threads=threads)
    fcfg = _get(cfg, "fit", {})
    gauge = _get(fcfg, "gauge", "pump_rate")
    gauge_value = getattr(params, gauge) if _get(fcfg, "gauge_from_config", True) else None
    res = F.fit_g2(est, gauge=gauge, gauge_value=gauge_value, n_starts=int(_get(fcfg, "n_starts", 1)),
                   seed=int(seed), tau_window=_get(fcfg, "tau_window_ns"))
    P = power_uw if power_uw is not None else _get(cfg, "power_uw")
    return G2Run(params, sc, hist, est, res, len(tags) / (sc.duration * 1e-9), P)


def shoulder_max(est: G2Estimate, lo_ns: float, hi_ns: float, fit: FitResult | None = None) -> float:
    """Largest fitted (or, without a fit, measured) g2 over lo <= |tau| <= hi."""
    if fit is not None:
        tau = np.linspace(lo_ns, hi_ns, 2001)
        return float(np.max(F.g2_model_from_result(fit)(tau)))
    sel = (np.abs(est.tau) >= lo_ns) & (np.abs(est.tau) <= hi_ns)
    return float(np.max(est.g2[sel]))


# -- lifetime ------------------------------------------------------------------

@dataclass
class LifetimeRun:
    powers_uw: np.ndarray
    dip_rates: np.ndarray
    dip_errors: np.ndarray
    runs: list
    fit: FitResult


def run_lifetime(cfg: dict, seed: int, threads: int = 1) -> LifetimeRun:
    """g2 pipeline at each pump power, then zero-power extrapolation of the dip rate."""
    powers = np.asarray(_get(cfg, "powers_uw", required=True), dtype=float)
    if np.unique(powers).size < 2:
        raise FitError("lifetime extrapolation needs at least two distinct powers")
    powers = np.sort(powers)
    runs, R, S = [], [], []
    for P in powers:
        try:
            run = run_g2(cfg, derived_seed(seed, 1, float(P)), threads, power_uw=float(P))
        except Exception as exc:
            raise type(exc)(f"g2 sub-run at {P:g} uW failed: {exc}") from exc
        runs.append(run)
        R.append(run.fit.extra["dip_rate"])
        S.append(run.fit.extra["dip_rate_err"])
    R, S = np.array(R), np.array(S)
    S = np.where(S > 0, S, np.maximum(1e-3 * R, 1e-12))
    res = F.fit_lifetime(powers, R, S, p_sat=_get(cfg, "p_sat_uw"))
    return LifetimeRun(powers, R, S, runs, res)


# -- saturation -------------------------------------------------------------------

@dataclass
class SaturationRun:
    name: str
    powers_uw: np.ndarray
    raw_cps: np.ndarray
    background_cps: np.ndarray
    fit: FitResult
    truth: dict = field(default_factory=dict)


def run_saturation_device(name: str, dev: dict, seed: int, threads: int = 1, index: int = 0) -> SaturationRun:
    powers = np.asarray(_get(dev, "powers_uw", required=True), dtype=float)
    if powers.size < 3:
        raise FitError("saturation sweep needs at least three powers")
    if np.any(powers <= 0):
        raise ConfigError("saturation powers must be > 0")
    dwell = float(_get(dev, "dwell_s", 1.0))
    eff = float(_get(dev, "collection_efficiency", required=True))
    bg = float(_get(dev, "background_cps_per_uw", 0.0))
    raw, off = [], []
    for P in powers:
        params, pump = emitter_from(dev, float(P))
        s = derived_seed(seed, 2, index, float(P))
        sc = StreamConfig(dwell * 1e9, eff, bg * P * 1e-9, 0.0, 0.0, s)
        raw.append(count_detected(params, sc, threads=threads) / dwell)
        rng = substream(s, 7)
        off.append(rng.poisson(bg * P * dwell) / dwell)
    raw, off = np.array(raw), np.array(off)
    # Poisson errors of the counts collected in one dwell
    sig = np.sqrt(np.maximum(raw * dwell, 1.0)) / dwell
    bsig = np.sqrt(np.maximum(off * dwell, 1.0)) / dwell
    res = F.fit_saturation(powers, raw, powers, off, sig, bsig)
    params, pump = emitter_from(dev, 1.0)
    from .emitter import saturation_parameters
    i_sat, p_sat = saturation_parameters(params, pump, eff)
    return SaturationRun(name, powers, raw, off, res, {"I_sat": i_sat, "P_sat": p_sat, "bg_slope": bg})


def run_saturation(cfg: dict, seed: int, threads: int = 1) -> dict:
    devices = _get(cfg, "devices", required=True)
    if not devices:
        raise ConfigError("no devices configured")
    return {name: run_saturation_device(name, dev, seed, threads, i)
            for i, (name, dev) in enumerate(sorted(devices.items()))}


def saturation_comparison(runs: dict) -> dict | None:
    if "nanowire" in runs and "bulk" in runs:
        return F.brightness_ratio(runs["nanowire"].fit, runs["bulk"].fit)
    return None


def predicted_lifetime(purcell_factor: float, bulk_lifetime_ns: float = 11.8) -> float:
    if not purcell_factor > 0:
        return math.nan
    return bulk_lifetime_ns / purcell_factor
