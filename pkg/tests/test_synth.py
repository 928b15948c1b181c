import json
import re
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from baroalign import ingest, pipeline, synth


def small(**kw):
    kw.setdefault("duration_s", 600.0)
    kw.setdefault("n_devices", 3)
    return synth.ScenarioConfig(**kw)


def test_same_seed_same_recordings():
    a, ta = synth.generate_session(small(rng_seed=5))
    b, tb = synth.generate_session(small(rng_seed=5))
    assert a == b
    assert ta == tb
    c, _ = synth.generate_session(small(rng_seed=6))
    assert a != c


def test_nonsimultaneous_pair_is_deterministic():
    cfg = small(rng_seed=2)
    r1, r2, truth = synth.generate_nonsimultaneous_pair(cfg)
    s1, s2, _ = synth.generate_nonsimultaneous_pair(cfg)
    assert (r1, r2) == (s1, s2)
    assert not truth.simultaneous
    assert r1.device_id != r2.device_id
    with pytest.raises(ValueError):
        truth.lag(r1.device_id, r2.device_id, 0.0)


def test_nonsimultaneous_baselines_spread():
    diffs = []
    for seed in range(200):
        r1, r2, _ = synth.generate_nonsimultaneous_pair(small(duration_s=300.0, n_devices=2, rng_seed=seed,
                                                              accel_sensors=()))
        diffs.append(r1.pressure.samples[0] - r2.pressure.samples[0])
    sd = np.std(diffs)
    # sqrt(2) * 928 Pa, plus sensor offsets and drift
    assert 0.85 * np.sqrt(2) * 928 < sd < 1.15 * np.sqrt(2) * 928


def test_passive_accel_is_gravity_plus_noise():
    recs, _ = synth.generate_session(synth.ScenarioConfig.passive(duration_s=600.0, accel_sensors=(synth.HIGH_RES,)))
    for rec in recs:
        acc = rec.accel[0].samples
        assert np.allclose(np.linalg.norm(acc.mean(axis=0)), 1.0, atol=1e-4)
        assert np.all(acc.std(axis=0) < 2 * synth.HIGH_RES.noise_sd_g)
        assert np.ptp(rec.pressure.samples) > 5.0


def test_active_accel_has_bursts():
    recs, _ = synth.generate_session(small(accel_sensors=(synth.HIGH_RES,)))
    mag = np.linalg.norm(recs[0].accel[0].samples, axis=1)
    assert mag.std() > 20 * synth.HIGH_RES.noise_sd_g


def test_altitude_events_are_listed():
    world = synth.PressureWorldConfig(altitude_event_rate_per_h=4.0, weather_drift_pa_per_h=0.0,
                                      ambient_fluct_sd_pa=0.0)
    cfg = synth.ScenarioConfig(duration_s=4 * 3600.0, n_devices=1, pressure_world=world, accel_sensors=(),
                               rng_seed=3)
    (rec,), truth = synth.generate_session(cfg)
    assert 4 <= len(truth.notes) <= 32
    p = rec.pressure
    t = p.times()
    for note in truth.notes:
        m = re.match(r"altitude change at\s+([\d.]+) s:\s+([+-][\d.]+) Pa over\s+([\d.]+) s", note)
        assert m, note
        t0, step, ramp = map(float, m.groups())
        assert 30.0 <= abs(step) <= 300.0 and 10.0 <= ramp <= 90.0
        others = [float(re.search(r"at\s+([\d.]+)", n).group(1)) for n in truth.notes if n != note]
        isolated = all(abs(o - t0) > 100 for o in others)
        t0 = float(truth.clocks[rec.device_id].device_time(t0))  # notes use world time
        before = (t > t0 - 5) & (t < t0)
        after = (t > t0 + ramp) & (t < t0 + ramp + 5)
        if before.any() and after.any() and isolated:
            # no drift and no other ramp nearby: the level change is the step
            assert p.samples[after].mean() - p.samples[before].mean() == pytest.approx(step, abs=6.0)


def test_standard_resolution_is_quantized_and_free_running():
    recs, _ = synth.generate_session(small(accel_sensors=(synth.STANDARD_RES,)))
    for rec in recs:
        acc = rec.accel[0]
        assert not acc.externally_triggered
        steps = acc.samples / synth.STANDARD_RES.lsb_g
        assert np.allclose(steps, np.round(steps), atol=1e-6)
        log = rec.fifo_logs[acc.name]
        assert log[-1].total_samples == len(acc)


@given(st.integers(0, 2 ** 31), st.floats(0, 3600))
@settings(max_examples=30)
def test_truth_lags_compose(seed, t):
    cfg = small(rng_seed=seed, duration_s=3600.0, accel_sensors=(),
                clock=synth.ClockConfig(skew_range_ppm=100.0, temperature_skew=bool(seed % 2)))
    clocks = {f"d{i}": synth._device_clock(np.random.default_rng([seed, i]), cfg, i) for i in range(3)}
    truth = synth.GroundTruth("active", True, tuple(clocks), clocks)
    ab = truth.lag("d0", "d1", t)
    bc = truth.lag("d1", "d2", t + ab)
    assert truth.lag("d0", "d2", t) == pytest.approx(ab + bc, abs=1e-9)


def test_truth_json_round_trip(tmp_path):
    cfg = small(rng_seed=4, clock=synth.ClockConfig(temperature_skew=True))
    recs, truth = synth.generate_session(cfg)
    synth.write_session(recs, truth, tmp_path)
    back = synth.read_ground_truth(tmp_path / "ground_truth.json")
    assert back.clocks == truth.clocks
    obj = json.loads((tmp_path / "ground_truth.json").read_text())
    assert {"a", "b", "offset_s", "skew_ppm"} <= set(obj["pairs"][0])
    for rec in recs:
        assert ingest.read_recording(tmp_path / rec.device_id) == rec


def test_written_session_is_byte_identical(tmp_path):
    for d in ("x", "y"):
        recs, truth = synth.generate_session(small(rng_seed=9, duration_s=300.0))
        synth.write_session(recs, truth, tmp_path / d)
    files = sorted(p.relative_to(tmp_path / "x") for p in (tmp_path / "x").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "x" / f).read_bytes() == (tmp_path / "y" / f).read_bytes()


def test_noiseless_session_aligns_at_zero():
    cfg = synth.ScenarioConfig(
        duration_s=1800.0,
        pressure_sensor=synth.PressureSensorConfig(absolute_offset_sd_pa=0.0, relative_noise_sd_pa=0.0),
        accel_sensors=(replace(synth.HIGH_RES, noise_sd_g=0.0),),
        motion=synth.MotionConfig(jitter_s=0.0),
        clock=synth.ClockConfig(offset_range_s=0.0, skews_ppm=(0.0,)),
        rng_seed=1,
    )
    (r1, r2), truth = synth.generate_session(cfg)
    report = pipeline.synchronize_pair(r1, r2)
    assert report.simultaneous
    mid = report.clock_model.reference_time_s
    assert abs(report.clock_model.lag_at(mid)) <= 1.0 / synth.HIGH_RES.rate_hz
    assert abs(report.clock_model.skew) * 1800.0 <= 1.0 / synth.HIGH_RES.rate_hz


@pytest.mark.parametrize(
    "kw",
    [dict(scenario="lazy"), dict(duration_s=100.0), dict(n_devices=0),
     dict(accel_sensors=(replace(synth.HIGH_RES, rate_hz=0.0),))],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        synth.ScenarioConfig(**kw)
