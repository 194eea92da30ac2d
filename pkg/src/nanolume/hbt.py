"""Hanbury Brown-Twiss measurement chain: beamsplitter, detector dead time,
coincidence histogramming and normalization to g2."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba as nb
import numpy as np

from .stream import TimeTagStream, substream

_KEY_SPLIT = 2


class HbtError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorModel:
    dead_time: float = 0.0
    split_ratio: float = 0.5

    def __post_init__(self):
        if not self.dead_time >= 0:
            raise HbtError("dead_time must be >= 0")
        if not 0.0 < self.split_ratio < 1.0:
            raise HbtError("split_ratio must lie strictly between 0 and 1")


@dataclass
class CorrelationHistogram:
    bin_width: float
    tau_min: float
    tau_max: float
    counts: np.ndarray
    n1: int
    n2: int
    acquisition_time: float

    def __post_init__(self):
        nb_ = (self.tau_max - self.tau_min) / self.bin_width
        if abs(nb_ - round(nb_)) > 1e-9 * max(1.0, abs(nb_)):
            raise HbtError("(tau_max - tau_min) / bin_width must be integral")
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if np.any(self.counts < 0) or self.n1 < 0 or self.n2 < 0:
            raise HbtError("counts and singles must be non-negative")

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def tau(self) -> np.ndarray:
        """Bin centres (ns)."""
        return self.tau_min + (np.arange(self.n_bins) + 0.5) * self.bin_width

    def __add__(self, other: "CorrelationHistogram") -> "CorrelationHistogram":
        if (self.bin_width, self.tau_min, self.tau_max) != (other.bin_width, other.tau_min, other.tau_max):
            raise HbtError("histogram binning differs")
        return CorrelationHistogram(self.bin_width, self.tau_min, self.tau_max,
                                    self.counts + other.counts, self.n1 + other.n1,
                                    self.n2 + other.n2, self.acquisition_time + other.acquisition_time)


@dataclass
class G2Estimate:
    tau: np.ndarray
    g2: np.ndarray
    g2_err: np.ndarray
    counts: np.ndarray
    scale: float  # g2 per coincidence count

    def sigma(self) -> np.ndarray:
        """Error bars with the one-count floor applied to empty bins."""
        return np.where(self.counts > 0, self.g2_err, self.scale)


def split(stream: TimeTagStream, model: DetectorModel, seed: int):
    rng = substream(seed, _KEY_SPLIT)
    u = rng.random(len(stream))
    first = u < model.split_ratio
    T = stream.total_duration
    return (TimeTagStream(stream.timestamps[first], channel=1, total_duration=T),
            TimeTagStream(stream.timestamps[~first], channel=2, total_duration=T))


@nb.njit(cache=True, nogil=True)
def _dead_time_mask(ts, dead):
    keep = np.zeros(ts.shape[0], dtype=np.bool_)
    last = -np.inf
    for i in range(ts.shape[0]):
        if ts[i] - last >= dead:
            keep[i] = True
            last = ts[i]
    return keep


def apply_dead_time(stream: TimeTagStream, dead_time: float) -> TimeTagStream:
    if dead_time <= 0 or len(stream) == 0:
        return TimeTagStream(stream.timestamps.copy(), stream.channel, stream.total_duration)
    keep = _dead_time_mask(stream.timestamps, float(dead_time))
    return TimeTagStream(stream.timestamps[keep], stream.channel, stream.total_duration)


@nb.njit(cache=True, nogil=True)
def _bin_index(d, inv_w, off_int, tau_min, integral):
    if integral:
        return int(math.floor(d * inv_w)) - off_int
    return int(math.floor((d - tau_min) * inv_w))


@nb.njit(cache=True, nogil=True)
def _xcorr_chunk(t1, t2, lo, hi, w, tau_min, tau_max, nbins, integral, off_int, start_stop):
    hist = np.zeros(nbins, dtype=np.int64)
    inv_w = 1.0 / w
    j0 = 0
    n2 = t2.shape[0]
    for i in range(lo, hi):
        a = t1[i]
        # conservative window; the bin index decides membership
        while j0 < n2 and t2[j0] - a < tau_min - w:
            j0 += 1
        j = j0
        while j < n2:
            d = t2[j] - a
            if d >= tau_max + w:
                break
            k = _bin_index(d, inv_w, off_int, tau_min, integral)
            if 0 <= k < nbins:
                hist[k] += 1
                if start_stop:
                    break
            j += 1
    return hist


def _binning(bin_width, tau_min, tau_max):
    if not bin_width > 0:
        raise HbtError("bin_width must be > 0")
    if not tau_min < tau_max:
        raise HbtError("tau_min must be < tau_max")
    nbins_f = (tau_max - tau_min) / bin_width
    nbins = int(round(nbins_f))
    if abs(nbins - nbins_f) > 1e-9 * max(1.0, nbins_f):
        raise HbtError("(tau_max - tau_min) / bin_width must be integral")
    off = tau_min / bin_width
    integral = abs(off - round(off)) < 1e-12 * max(1.0, abs(off))
    return nbins, integral, int(round(off)) if integral else 0


def cross_correlate(ch1: TimeTagStream, ch2: TimeTagStream, bin_width: float, tau_min: float,
                    tau_max: float, threads: int = 1, start_stop: bool = False) -> CorrelationHistogram:
    """Histogram of t2 - t1 over all pairs with lag in [tau_min, tau_max).

    With start_stop=True only the first in-window ch2 event after each ch1
    event is counted, as in start-stop TAC electronics.
    """
    nbins, integral, off_int = _binning(bin_width, tau_min, tau_max)
    t1, t2 = ch1.timestamps, ch2.timestamps
    n = t1.size
    nchunks = max(1, min(int(threads), n)) if n else 1
    edges = np.linspace(0, n, nchunks + 1).astype(np.int64)

    def run(c):
        return _xcorr_chunk(t1, t2, int(edges[c]), int(edges[c + 1]), float(bin_width), float(tau_min),
                            float(tau_max), nbins, integral, off_int, start_stop)

    if nchunks > 1:
        with ThreadPoolExecutor(max_workers=nchunks) as pool:
            parts = list(pool.map(run, range(nchunks)))
    else:
        parts = [run(0)]
    counts = np.sum(parts, axis=0).astype(np.int64)
    T = max(ch1.total_duration, ch2.total_duration)
    return CorrelationHistogram(float(bin_width), float(tau_min), float(tau_max), counts,
                                len(ch1), len(ch2), T)


def brute_force_correlate(ch1: TimeTagStream, ch2: TimeTagStream, bin_width, tau_min, tau_max):
    """O(N^2) all-pairs histogram; reference for cross_correlate."""
    nbins, integral, off_int = _binning(bin_width, tau_min, tau_max)
    d = ch2.timestamps[None, :] - ch1.timestamps[:, None]
    if integral:
        k = np.floor(d / bin_width).astype(np.int64) - off_int
    else:
        k = np.floor((d - tau_min) / bin_width).astype(np.int64)
    k = k[(k >= 0) & (k < nbins)]
    return np.bincount(k, minlength=nbins).astype(np.int64)


def normalize(hist: CorrelationHistogram) -> G2Estimate:
    """g2_k = C_k T / (n1 n2 w) with Poisson error bars sqrt(C_k) on the same scale."""
    if hist.n1 <= 0 or hist.n2 <= 0:
        raise HbtError("both channels need at least one event to normalize")
    if not hist.acquisition_time > 0:
        raise HbtError("acquisition_time must be > 0")
    scale = hist.acquisition_time / (hist.n1 * hist.n2 * hist.bin_width)
    c = hist.counts.astype(float)
    return G2Estimate(hist.tau, c * scale, np.sqrt(c) * scale, hist.counts.copy(), scale)


def measure_g2(stream: TimeTagStream, model: DetectorModel, seed: int, bin_width: float,
               tau_max: float, threads: int = 1):
    """Beamsplitter, per-channel dead time, correlation and normalization in one call."""
    a, b = split(stream, model, seed)
    a = apply_dead_time(a, model.dead_time)
    b = apply_dead_time(b, model.dead_time)
    hist = cross_correlate(a, b, bin_width, -tau_max, tau_max, threads=threads)
    return hist, normalize(hist)


def write_histogram(path_csv, hist: CorrelationHistogram, header_lines=(), extra_meta=None):
    est = normalize(hist) if hist.n1 > 0 and hist.n2 > 0 else None
    with open(path_csv, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["tau_ns", "counts", "g2", "g2_err"])
        for i, tau in enumerate(hist.tau):
            g = est.g2[i] if est is not None else float("nan")
            e = est.g2_err[i] if est is not None else float("nan")
            w.writerow([f"{tau:.6f}", int(hist.counts[i]), f"{g:.10g}", f"{e:.10g}"])
    meta = {"n1": int(hist.n1), "n2": int(hist.n2), "bin_width": hist.bin_width,
            "acquisition_time": hist.acquisition_time, "tau_min": hist.tau_min,
            "tau_max": hist.tau_max}
    if extra_meta:
        meta.update(extra_meta)
    sidecar = str(path_csv).rsplit(".", 1)[0] + ".json"
    with open(sidecar, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return sidecar


def read_histogram(path_csv) -> CorrelationHistogram:
    sidecar = str(path_csv).rsplit(".", 1)[0] + ".json"
    with open(sidecar) as fh:
        meta = json.load(fh)
    with open(path_csv) as fh:
        rows = [ln for ln in fh if not ln.startswith("#")]
    counts = [int(r.split(",")[1]) for r in rows[1:] if r.strip()]
    return CorrelationHistogram(meta["bin_width"], meta["tau_min"], meta["tau_max"],
                                np.array(counts), meta["n1"], meta["n2"], meta["acquisition_time"])
