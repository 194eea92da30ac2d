"""Photon time-tag generation and detection-chain transforms.

Emissions come from an exact event-driven simulation of the three-level
Markov chain.  The record is split into fixed-length segments, each with
its own Philox substream and a stationary initial state, so the output
does not depend on how many worker threads process the segments.
"""

from __future__ import annotations

import csv
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba as nb
import numpy as np

from .emitter import EmitterParams, steady_state

MAGIC = b"NLTT"
FORMAT_VERSION = 1
SEGMENT_NS = 1e8
MAX_EVENTS = 1e10
_CHUNK = 1 << 18

# substream keys
_KEY_EMIT = 0
_KEY_DETECT = 1


class StreamError(ValueError):
    pass


@dataclass(frozen=True)
class StreamConfig:
    duration: float
    detection_efficiency: float = 1.0
    background_rate: float = 0.0
    dark_rate: float = 0.0
    jitter_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.duration > 0:
            raise StreamError("duration must be > 0")
        if not 0.0 <= self.detection_efficiency <= 1.0:
            raise StreamError("detection_efficiency must lie in [0, 1]")
        for name in ("background_rate", "dark_rate", "jitter_sigma"):
            v = getattr(self, name)
            if not (v >= 0 and np.isfinite(v)):
                raise StreamError(f"{name} must be finite and >= 0")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise StreamError("rng_seed must be an unsigned 64-bit integer")


@dataclass
class TimeTagStream:
    timestamps: np.ndarray
    channel: int = 0
    total_duration: float = 0.0

    def __post_init__(self):
        self.timestamps = np.ascontiguousarray(self.timestamps, dtype=np.float64)

    def __len__(self):
        return self.timestamps.size

    @property
    def rate(self) -> float:
        return len(self) / self.total_duration if self.total_duration > 0 else 0.0

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.timestamps) >= 0))


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox generator for a logical stream identified by key."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@nb.njit(cache=True, nogil=True)
def _gillespie(state, t, t_end, rates, expo, unif, out, n_out):
    """Advance the chain until t_end or until a buffer runs out.

    Returns (state, t, n_out, n_expo_used, n_unif_used, done).
    """
    r = rates[0]
    g = rates[1]
    k23 = rates[2]
    k31 = rates[3]
    ie = 0
    iu = 0
    ne = expo.shape[0]
    nu = unif.shape[0]
    nmax = out.shape[0]
    while True:
        if ie >= ne or iu >= nu or n_out >= nmax:
            return state, t, n_out, ie, iu, False
        if state == 0:
            total = r
        elif state == 1:
            total = g + k23
        else:
            total = k31
        if total <= 0.0:
            return state, t_end, n_out, ie, iu, True
        dt = expo[ie] / total
        ie += 1
        if t + dt >= t_end:
            return state, t_end, n_out, ie, iu, True
        t += dt
        if state == 0:
            state = 1
        elif state == 1:
            u = unif[iu]
            iu += 1
            if u * total < g:
                out[n_out] = t
                n_out += 1
                state = 0
            else:
                state = 2
        else:
            state = 0


def _simulate_segment(params: EmitterParams, seed: int, index: int, t0: float, t1: float):
    rng = substream(seed, _KEY_EMIT, index)
    pss = steady_state(params).as_array()
    state = int(np.searchsorted(np.cumsum(pss), rng.random() * pss.sum(), side="right"))
    state = min(state, 2)
    rates = params.as_array()
    t = t0
    pieces = []
    expected = rates[1] * pss[1] * (t1 - t0)
    out = np.empty(int(min(max(expected * 1.1 + 64, 1024), 1 << 24)))
    n_out = 0
    expo = rng.standard_exponential(_CHUNK)
    unif = rng.random(_CHUNK)
    while True:
        state, t, n_out, ie, iu, done = _gillespie(state, t, t1, rates, expo, unif, out, n_out)
        if done:
            break
        expo = expo[ie:]
        unif = unif[iu:]
        if n_out >= out.shape[0]:
            pieces.append(out[:n_out].copy())
            n_out = 0
        if expo.size == 0:
            expo = rng.standard_exponential(_CHUNK)
        if unif.size == 0:
            unif = rng.random(_CHUNK)
    pieces.append(out[:n_out].copy())
    return np.concatenate(pieces)


def _check_budget(params: EmitterParams, duration: float):
    if duration * params.total_rate > MAX_EVENTS:
        raise StreamError(
            f"requested {duration * params.total_rate:.3g} transitions; limit is {MAX_EVENTS:.0e}")


def simulate_emissions(params: EmitterParams, config: StreamConfig, threads: int = 1,
                       segment_ns: float = SEGMENT_NS) -> TimeTagStream:
    """Exact stochastic emission record; one tag per radiative 2->1 jump."""
    _check_budget(params, config.duration)
    edges = np.arange(0.0, config.duration, segment_ns)
    bounds = [(i, float(a), float(min(a + segment_ns, config.duration))) for i, a in enumerate(edges)]

    def run(b):
        return _simulate_segment(params, config.rng_seed, *b)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    ts = np.concatenate(parts) if parts else np.empty(0)
    return TimeTagStream(ts, channel=0, total_duration=config.duration)


def detect(emissions: TimeTagStream, config: StreamConfig, n_detectors: int = 1,
           key: int = 0) -> TimeTagStream:
    """Apply collection/detection efficiency, background, dark counts and jitter.

    Dark counts are added at n_detectors * dark_rate so that a later
    beamsplitter hands each detector its own dark rate on average.
    """
    rng = substream(config.rng_seed, _KEY_DETECT, key)
    T = emissions.total_duration or config.duration
    ts = emissions.timestamps
    if config.detection_efficiency < 1.0:
        keep = rng.random(ts.size) < config.detection_efficiency
        ts = ts[keep]
    else:
        rng.random(ts.size)  # keep the substream layout independent of efficiency
    n_bg = rng.poisson(config.background_rate * T)
    n_dark = rng.poisson(config.dark_rate * n_detectors * T)
    extra = rng.random(n_bg + n_dark) * T
    if extra.size:
        ts = np.concatenate([ts, extra])
        ts = ts[np.argsort(ts, kind="stable")]
    if config.jitter_sigma > 0 and ts.size:
        ts = ts + rng.normal(0.0, config.jitter_sigma, ts.size)
        ts = ts[np.argsort(ts, kind="stable")]
        ts = ts[(ts >= 0.0) & (ts < T)]
    return TimeTagStream(ts, channel=emissions.channel, total_duration=T)


def count_detected(params: EmitterParams, config: StreamConfig, threads: int = 1,
                   segment_ns: float = SEGMENT_NS) -> int:
    """Number of detected events over config.duration without holding the whole record."""
    _check_budget(params, config.duration)
    edges = np.arange(0.0, config.duration, segment_ns)
    total = 0

    def run(item):
        i, a = item
        b = min(a + segment_ns, config.duration)
        ts = _simulate_segment(params, config.rng_seed, i, float(a), float(b))
        seg = TimeTagStream(ts - a, total_duration=b - a)
        sub = StreamConfig(b - a, config.detection_efficiency, config.background_rate,
                           config.dark_rate, 0.0, config.rng_seed)
        return len(detect(seg, sub, key=1000 + i))

    items = list(enumerate(edges))
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            total = sum(pool.map(run, items))
    else:
        total = sum(run(it) for it in items)
    return int(total)


# -- file formats -----------------------------------------------------------

_HEADER = struct.Struct("<4sHHd")


def write_tags(path, stream: TimeTagStream):
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, int(stream.channel), float(stream.total_duration)))
        fh.write(stream.timestamps.astype("<f8").tobytes())


def read_tags(path) -> TimeTagStream:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise StreamError("truncated time-tag header")
        magic, version, channel, duration = _HEADER.unpack(head)
        if magic != MAGIC:
            raise StreamError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise StreamError(f"unsupported time-tag format version {version}")
        data = fh.read()
    if len(data) % 8:
        raise StreamError("time-tag payload is not a whole number of f64 records")
    ts = np.frombuffer(data, dtype="<f8").astype(np.float64)
    return TimeTagStream(ts, channel=channel, total_duration=duration)


def write_tags_csv(path, stream: TimeTagStream, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["t_ns"])
        for t in stream.timestamps:
            w.writerow([repr(float(t))])


def read_tags_csv(path, channel=0, total_duration=None) -> TimeTagStream:
    with open(path) as fh:
        rows = [ln for ln in fh if not ln.startswith("#")]
    if not rows or rows[0].strip() != "t_ns":
        raise StreamError("missing t_ns header")
    ts = np.array([float(r) for r in rows[1:] if r.strip()])
    T = total_duration if total_duration is not None else (float(ts.max()) if ts.size else 0.0)
    return TimeTagStream(ts, channel=channel, total_duration=T)
