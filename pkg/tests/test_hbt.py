import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nanolume.emitter import EmitterParams, emission_rate, g2_analytic
from nanolume.hbt import (
    CorrelationHistogram,
    DetectorModel,
    HbtError,
    apply_dead_time,
    brute_force_correlate,
    cross_correlate,
    measure_g2,
    normalize,
    read_histogram,
    split,
    write_histogram,
)
from nanolume.stream import StreamConfig, TimeTagStream, detect, simulate_emissions, substream


def poisson_stream(rate, T, seed):
    rng = np.random.default_rng(seed)
    n = rng.poisson(rate * T)
    return TimeTagStream(np.sort(rng.random(n) * T), total_duration=T)


def bin_average(prm, est, w, rho=1.0, sub=41):
    off = (np.arange(sub) + 0.5) / sub - 0.5
    g = g2_analytic(prm, est.tau[:, None] + off[None, :] * w).mean(axis=1)
    return 1 - rho**2 + rho**2 * g


def test_model_validation():
    with pytest.raises(HbtError):
        DetectorModel(-1.0)
    for r in (0.0, 1.0):
        with pytest.raises(HbtError):
            DetectorModel(0.0, r)
    with pytest.raises(HbtError):
        CorrelationHistogram(0.3, 0.0, 1.0, np.zeros(3), 1, 1, 1.0)


def test_split_binomial_and_deterministic():
    s = poisson_stream(1.0, 1e6, 1)
    a, b = split(s, DetectorModel(0.0, 0.5), seed=42)
    n = len(s)
    assert abs(len(a) - n / 2) < 3 * np.sqrt(n / 4)
    assert len(a) + len(b) == n
    a2, _ = split(s, DetectorModel(0.0, 0.5), seed=42)
    assert np.array_equal(a.timestamps, a2.timestamps)
    _, empty = split(s, DetectorModel(0.0, 1 - 1e-15), seed=1)
    assert len(empty) == 0


def test_dead_time_basic():
    s = TimeTagStream(np.arange(100) * 2.0, total_duration=200.0)
    assert np.array_equal(apply_dead_time(s, 0.0).timestamps, s.timestamps)
    kept = apply_dead_time(s, 3.0).timestamps
    assert np.array_equal(kept, s.timestamps[::2])


def test_dead_time_renewal_rate():
    # independent renewal oracle: walk a fresh Poisson process event by event
    rho, dead, T = 0.05, 22.0, 2e7
    s = poisson_stream(rho, T, 7)
    kept = len(apply_dead_time(s, dead))
    rng = substream(99, 0)
    t, n = 0.0, 0
    while True:
        t += rng.exponential(1 / rho)
        if t >= T:
            break
        n += 1
        t += dead
    expect = rho / (1 + rho * dead) * T
    sd = np.sqrt(expect)
    assert abs(kept - expect) < 3 * sd
    assert abs(n - expect) < 3 * sd


def test_shift_gives_single_spike():
    t = np.sort(np.random.default_rng(3).random(500) * 1e5)
    a = TimeTagStream(t, total_duration=1e5 + 10)
    b = TimeTagStream(t + 3.3, total_duration=1e5 + 10)
    h = cross_correlate(a, b, 1.0, -5.0, 5.0)
    assert h.counts[8] == 500
    assert h.counts.sum() - 500 == brute_force_correlate(a, b, 1.0, -5.0, 5.0).sum() - 500


@given(st.integers(0, 2**32 - 1), st.integers(1, 2000), st.sampled_from([0.37, 1.0, 2.5]))
@settings(max_examples=25, deadline=None)
def test_two_pointer_equals_brute_force(seed, n, w):
    rng = np.random.default_rng(seed)
    T = n * 3.0
    a = TimeTagStream(np.sort(rng.random(n) * T), total_duration=T)
    b = TimeTagStream(np.sort(rng.random(rng.integers(1, 2000)) * T), total_duration=T)
    for lo, hi in ((-20 * w, 20 * w), (-3.1, -3.1 + 7 * w)):
        fast = cross_correlate(a, b, w, lo, hi).counts
        assert np.array_equal(fast, brute_force_correlate(a, b, w, lo, hi))
        assert np.array_equal(cross_correlate(a, b, w, lo, hi, threads=4).counts, fast)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_mirror_symmetry(seed):
    rng = np.random.default_rng(seed)
    a = TimeTagStream(np.sort(rng.random(800) * 1e3), total_duration=1e3)
    b = TimeTagStream(np.sort(rng.random(700) * 1e3), total_duration=1e3)
    ab = cross_correlate(a, b, 0.5, -25.0, 25.0).counts
    ba = cross_correlate(b, a, 0.5, -25.0, 25.0).counts
    assert np.array_equal(ab, ba[::-1])


def test_rejects_bad_binning():
    s = TimeTagStream(np.array([1.0]), total_duration=2.0)
    with pytest.raises(HbtError):
        cross_correlate(s, s, 0.0, -1.0, 1.0)
    with pytest.raises(HbtError):
        cross_correlate(s, s, 0.3, -1.0, 1.0)
    with pytest.raises(HbtError):
        cross_correlate(s, s, 1.0, 1.0, -1.0)


def test_start_stop_counts_at_most_one_per_start():
    t = np.arange(10) * 1.0
    s = TimeTagStream(t, total_duration=10.0)
    full = cross_correlate(s, s, 1.0, 0.5, 5.5)
    ss = cross_correlate(s, s, 1.0, 0.5, 5.5, start_stop=True)
    assert ss.counts.sum() <= len(s)
    assert full.counts.sum() > ss.counts.sum()


def test_independent_poisson_flat():
    a, b = poisson_stream(0.02, 1e8, 1), poisson_stream(0.02, 1e8, 2)
    h = cross_correlate(a, b, 2.0, -100.0, 100.0)
    est = normalize(h)
    z = (est.g2 - 1) / est.sigma()
    assert np.all(np.abs(z) < 4.5)
    assert abs(z.mean()) < 3 / np.sqrt(z.size)


def test_normalize_errors():
    h = CorrelationHistogram(1.0, -2.0, 2.0, np.ones(4), 0, 5, 10.0)
    with pytest.raises(HbtError):
        normalize(h)
    h = CorrelationHistogram(1.0, -2.0, 2.0, np.ones(4), 5, 5, 0.0)
    with pytest.raises(HbtError):
        normalize(h)
    h = CorrelationHistogram(1.0, -2.0, 2.0, np.array([4, 0, 9, 1]), 5, 8, 20.0)
    est = normalize(h)
    assert np.allclose(est.g2, np.array([4, 0, 9, 1]) * 20 / 40)
    assert np.allclose(est.g2_err, np.sqrt([4, 0, 9, 1]) * 0.5)


def _pipeline(prm, T, seed, rho=1.0, w=1.0, tau_max=200.0, dead=0.0):
    bg = emission_rate(prm) * (1 / rho - 1)
    cfg = StreamConfig(T, background_rate=bg, rng_seed=seed)
    tags = detect(simulate_emissions(prm, cfg), cfg)
    return measure_g2(tags, DetectorModel(dead), seed, w, tau_max)


def test_pipeline_reproduces_analytic_g2():
    prm = EmitterParams(0.04, 0.07, 0.02, 0.01)
    _, est = _pipeline(prm, 1e8, 12, w=2.0, tau_max=300.0)
    model = bin_average(prm, est, 2.0)
    chi2 = np.sum(((est.g2 - model) / est.sigma()) ** 2)
    dof = est.g2.size
    assert stats.chi2.sf(chi2, dof) > 1e-3


def test_low_pump_antibunching():
    prm = EmitterParams(0.01, 1 / 14.0, 0.003, 0.003)
    _, est = _pipeline(prm, 3e8, 2, w=1.0, tau_max=50.0)
    zero = np.argmin(np.abs(est.tau))
    assert est.g2[zero] < 0.5


def test_high_pump_shoulders():
    prm = EmitterParams(0.5, 1 / 14.0, 0.02, 0.01)
    _, est = _pipeline(prm, 1e8, 3, w=2.0, tau_max=100.0)
    sel = (np.abs(est.tau) > 10) & (np.abs(est.tau) < 40)
    assert est.g2[sel].mean() > 1.0 + 3 * est.sigma()[sel].mean() / np.sqrt(sel.sum())


def test_tail_mean_is_one():
    prm = EmitterParams(0.05, 0.07, 0.02, 0.01)
    _, est = _pipeline(prm, 1e8, 4, w=5.0, tau_max=3000.0)
    tail = np.abs(est.tau) > 2000
    mean = est.g2[tail].mean()
    err = np.sqrt(np.sum(est.sigma()[tail] ** 2)) / tail.sum()
    assert abs(mean - 1.0) < 2 * err


def test_doubling_acquisition_leaves_g2_unchanged():
    prm = EmitterParams(0.05, 0.07, 0.02, 0.01)
    _, a = _pipeline(prm, 5e7, 5, w=2.0, tau_max=100.0)
    _, b = _pipeline(prm, 1e8, 6, w=2.0, tau_max=100.0)
    z = (a.g2 - b.g2) / np.hypot(a.sigma(), b.sigma())
    assert stats.chi2.sf(np.sum(z**2), z.size) > 1e-3


def test_background_dilution():
    prm = EmitterParams(0.02, 0.02)
    rho = 0.7
    _, est = _pipeline(prm, 1e8, 8, rho=rho, w=0.5, tau_max=5.0)
    zero = np.argmin(np.abs(est.tau - 0.25))
    expect = bin_average(prm, est, 0.5, rho=rho)[zero]
    assert abs(expect - (1 - rho**2)) < 0.01
    assert abs(est.g2[zero] - expect) < 3 * est.sigma()[zero]


def test_histogram_add_and_round_trip(tmp_path):
    h = CorrelationHistogram(1.0, -2.0, 2.0, np.array([1, 2, 3, 4]), 10, 12, 100.0)
    s = h + h
    assert np.array_equal(s.counts, 2 * h.counts) and s.n1 == 20 and s.acquisition_time == 200.0
    with pytest.raises(HbtError):
        h + CorrelationHistogram(2.0, -2.0, 2.0, np.array([1, 2]), 1, 1, 1.0)
    side = write_histogram(tmp_path / "h.csv", h, header_lines=["x"])
    assert side.endswith("h.json")
    back = read_histogram(tmp_path / "h.csv")
    assert np.array_equal(back.counts, h.counts)
    assert (back.n1, back.n2, back.bin_width, back.acquisition_time) == (10, 12, 1.0, 100.0)
    head = (tmp_path / "h.csv").read_text().splitlines()[1]
    assert head == "tau_ns,counts,g2,g2_err"
