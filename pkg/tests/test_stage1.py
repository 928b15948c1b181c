import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from baroalign import stage1, synth
from baroalign.model import Method, Verdict
from baroalign.stage1 import PrealignmentError, Stage1Config

from conftest import pressure_trace

RATE = 10.0


def world_signal(rng, duration_s, grid_hz=20.0):
    """Smooth pressure world with a few altitude ramps, sampled on a fine grid."""
    n = int(duration_s * grid_hz) + 1
    t = np.arange(n) / grid_hz
    x = 101325.0 + 20.0 * np.sin(2 * np.pi * t / 1800.0)
    for t0 in rng.uniform(0, duration_s, max(2, int(duration_s / 120))):
        step = rng.uniform(50, 300) * rng.choice([-1, 1])
        ramp = rng.uniform(5, 30)
        u = np.clip((t - t0) / ramp, 0, 1)
        x = x + step * 0.5 * (1 - np.cos(np.pi * u))
    return lambda w: np.interp(w, t, x)


def shifted_pair(rng, lag_s, duration_s=1200.0, noise_pa=12.0, offset_pa=0.0):
    world = world_signal(rng, duration_s + 2 * abs(lag_s) + 10)
    pad = abs(lag_s) + 5
    n = int(duration_s * RATE)
    t = np.arange(n) / RATE
    # device 2 sees an event at device-1 time t at t + lag
    p1 = world(t + pad) + rng.normal(0, noise_pa, n)
    p2 = world(t + pad - lag_s) + rng.normal(0, noise_pa, n) + offset_pa
    return pressure_trace(p1), pressure_trace(p2)


# --- rejection probability ------------------------------------------------------


def test_rejprob_zero_band_rejects_everything():
    assert stage1.rejection_probability(928.0, 0.0) == 1.0


def test_rejprob_vanishing_spread_never_rejects():
    assert stage1.rejection_probability(1e-9, 100.0) == 0.0


def test_rejprob_monte_carlo():
    rng = np.random.default_rng(7)
    d = rng.normal(0, 928.0, 10 ** 6) - rng.normal(0, 928.0, 10 ** 6)
    mc = np.mean(np.abs(d) > 200.0)
    assert stage1.rejection_probability(928.0, 100.0) == pytest.approx(mc, abs=0.003)
    assert stage1.acceptance_probability(928.0, 100.0) == pytest.approx(1 - mc, abs=0.003)


@given(st.floats(1.0, 5000.0), st.floats(1.0, 5000.0), st.floats(0.0, 1000.0))
def test_rejprob_monotone(s1, s2, a):
    lo, hi = sorted((s1, s2))
    assert stage1.rejection_probability(lo, a) <= stage1.rejection_probability(hi, a)
    assert stage1.rejection_probability(lo, a) >= stage1.rejection_probability(lo, a + 10.0)


@pytest.mark.parametrize("sigma, a", [(0.0, 1.0), (-1.0, 1.0), (1.0, -1.0)])
def test_rejprob_bad_input(sigma, a):
    with pytest.raises(ValueError):
        stage1.rejection_probability(sigma, a)


# --- simultaneity check ------------------------------------------------------------


def test_identical_traces_accepted():
    p = pressure_trace(101325 + np.cumsum(np.random.default_rng(1).normal(0, 2, 1200)))
    res = stage1.check_simultaneous(p, p)
    assert res.statistic_pa == 0.0
    assert res.verdict is Verdict.SIMULTANEOUS and res.simultaneous
    assert res.best_lag.lag_s == 0.0


def test_constant_offset_rejected():
    p = pressure_trace(101325 + np.cumsum(np.random.default_rng(2).normal(0, 2, 1200)))
    q = pressure_trace(p.samples + 300.0)
    res = stage1.check_simultaneous(p, q)
    assert res.statistic_pa == pytest.approx(300.0, abs=1e-9)
    assert res.verdict is Verdict.REJECTED


def test_independent_baselines_rejected_at_predicted_rate():
    rng = np.random.default_rng(3)
    sigma, threshold, trials = synth.INTERDAY_SIGMA_PA, 100.0, 2000
    cfg = Stage1Config(rejection_threshold_pa=threshold)
    rejected = 0
    for _ in range(trials):
        b1, b2 = rng.normal(101325.0, sigma, 2)
        p1 = pressure_trace(b1 + rng.normal(0, 4, 700))
        p2 = pressure_trace(b2 + rng.normal(0, 4, 650))
        rejected += not stage1.check_simultaneous(p1, p2, cfg).simultaneous
    # the band is |X1 - X2| <= threshold, i.e. A = threshold / 2
    p = stage1.rejection_probability(sigma, threshold / 2)
    se = math.sqrt(p * (1 - p) / trials)
    assert abs(rejected / trials - p) <= 3 * se + 0.005


def test_statistic_symmetric():
    rng = np.random.default_rng(4)
    p1, p2 = shifted_pair(rng, 7.0, duration_s=900, offset_pa=40)
    p2 = pressure_trace(p2.samples[:7000])
    a = stage1.check_simultaneous(p1, p2)
    b = stage1.check_simultaneous(p2, p1)
    assert abs(a.statistic_pa - b.statistic_pa) <= 1e-12 * max(1.0, a.statistic_pa)
    assert a.best_lag.lag_s == pytest.approx(-b.best_lag.lag_s)


@given(st.floats(0.0, 200.0), st.floats(1.0, 300.0), st.floats(1.0, 300.0))
def test_threshold_monotone(offset, t1, t2):
    p = pressure_trace(101325 + np.sin(np.arange(800) / 30.0) * 50)
    q = pressure_trace(p.samples[:700] + offset)
    lo, hi = sorted((t1, t2))
    accepted_low = stage1.check_simultaneous(p, q, Stage1Config(rejection_threshold_pa=lo)).simultaneous
    accepted_high = stage1.check_simultaneous(p, q, Stage1Config(rejection_threshold_pa=hi)).simultaneous
    assert accepted_high or not accepted_low


def test_short_overlap_gives_no_verdict():
    p = pressure_trace(np.full(590, 101325.0))
    res = stage1.check_simultaneous(p, p)
    assert res.verdict is Verdict.INSUFFICIENT
    assert math.isnan(res.statistic_pa) and res.best_lag is None


def test_start_times_enter_the_lag():
    rng = np.random.default_rng(5)
    p1, p2 = shifted_pair(rng, 0.0, duration_s=600)
    p2 = pressure_trace(p2.samples, start=1000.0)
    assert stage1.check_simultaneous(p1, p2).best_lag.lag_s == pytest.approx(1000.0)
    assert stage1.prealign(p1, p2).lag_s == pytest.approx(1000.0)


def test_search_range_limits_lag():
    rng = np.random.default_rng(6)
    p1, p2 = shifted_pair(rng, 30.0, duration_s=900, noise_pa=1.0)
    p2 = pressure_trace(p2.samples[300:8000], start=30.0)
    cfg = Stage1Config(search_range_s=(-5.0, 5.0))
    est = stage1.prealign(p1, p2, cfg)
    assert -5.0 <= est.lag_s <= 5.0


def test_mismatched_rates_raise():
    with pytest.raises(ValueError, match="resample"):
        stage1.check_simultaneous(pressure_trace(np.full(900, 1e5)), pressure_trace(np.full(900, 1e5), rate=5.0))


# --- pre-alignment -----------------------------------------------------------------


@pytest.mark.parametrize("method", [Method.DELTA_STD, Method.DELTA_ERROR])
@pytest.mark.parametrize("seed", range(5))
def test_recovers_shift(seed, method):
    rng = np.random.default_rng(100 + seed)
    p1, p2 = shifted_pair(rng, 12.3, duration_s=3600.0)
    # containment: device 2 covers a sub-span of device 1
    p2 = pressure_trace(p2.samples[200:-200], start=20.0)
    est = stage1.prealign(p1, p2, Stage1Config(method=method))
    assert est.method is method
    assert abs(est.lag_s - 12.3) <= 0.3


def test_constant_traces_cannot_be_aligned():
    rng = np.random.default_rng(8)
    p1 = pressure_trace(101325 + rng.normal(0, 4, 6000))
    p2 = pressure_trace(101300 + rng.normal(0, 4, 5000))
    for method in (Method.DELTA_STD, Method.DELTA_ERROR):
        with pytest.raises(PrealignmentError, match="no pressure variation; pre-alignment impossible"):
            stage1.prealign(p1, p2, Stage1Config(method=method))


@given(st.floats(-500.0, 500.0), st.floats(-500.0, 500.0))
def test_delta_std_ignores_offsets(c1, c2):
    rng = np.random.default_rng(9)
    p1, p2 = shifted_pair(rng, 4.2, duration_s=400, noise_pa=3.0)
    p2 = pressure_trace(p2.samples[100:-100], start=10.0)
    base = stage1.prealign(p1, p2).lag_s
    moved = stage1.prealign(pressure_trace(p1.samples + c1), pressure_trace(p2.samples + c2, start=10.0))
    assert moved.lag_s == base


def test_lowpass_is_zero_phase():
    x = np.zeros(101)
    x[50] = 1.0
    y = stage1.lowpass(x, 20)
    assert np.allclose(y, y[::-1])
    assert np.sum(np.arange(101) * y) / np.sum(y) == pytest.approx(50.0)


def test_config_validation():
    with pytest.raises(ValueError):
        Stage1Config(method=Method.XCORR)
    with pytest.raises(ValueError):
        Stage1Config(rejection_threshold_pa=0)
    with pytest.raises(ValueError):
        Stage1Config(search_range_s=(5.0, -5.0))


@pytest.mark.slow
def test_delta_std_not_worse_than_delta_error():
    errs = {Method.DELTA_STD: [], Method.DELTA_ERROR: []}
    base = synth.ScenarioConfig(duration_s=3600, accel_sensors=())
    for seed in range(50):
        (r1, r2), truth = synth.generate_session(base.with_seed(seed))
        for method in errs:
            est = stage1.prealign(r1.pressure, r2.pressure, Stage1Config(method=method))
            t_mid = 0.5 * (r2.pressure.start_time_s + r2.pressure.end_time_s) - est.lag_s
            errs[method].append(abs(est.lag_s - truth.lag(r1.device_id, r2.device_id, t_mid)))
    std_med = np.median(errs[Method.DELTA_STD])
    err_med = np.median(errs[Method.DELTA_ERROR])
    assert err_med <= 2.0 and std_med <= 2.0
    assert std_med <= err_med
