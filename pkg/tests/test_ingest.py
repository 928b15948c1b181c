import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from baroalign import ingest
from baroalign.model import FifoReadout, Recording, TraceKind

from conftest import accel_trace, make_recording, pressure_trace

RATE = 200.0
STEP = 0.1  # readout interval, 20 samples at RATE


def fifo_fixture(segment_sizes, rng=None):
    """Trace plus readout log whose segment n delivered ``segment_sizes[n]`` samples."""
    counts = np.concatenate(([0], np.cumsum(segment_sizes)))
    log = tuple(FifoReadout(i * STEP, int(c)) for i, c in enumerate(counts))
    rng = rng or np.random.default_rng(0)
    trace = accel_trace(rng.normal(size=(int(counts[-1]), 3)), rate=RATE, triggered=False)
    return trace, log


def check_within_one(trace, log):
    t0, l0 = log[0].t_s, log[0].total_samples
    for r in log:
        assert abs(r.total_samples - ingest.expected_length(r.t_s, t0, RATE, l0)) <= 1.0 + 1e-9
    assert log[-1].total_samples == len(trace)


def test_expected_length_examples():
    assert ingest.expected_length(0.0, 0.0, 200.0, 50) == 50
    assert ingest.expected_length(1.0, 0.0, 200.0, 50) == 250
    assert ingest.expected_length(3600.0, 0.0, 200.0, 0) == 720000


def test_consistent_log_is_untouched():
    trace, log = fifo_fixture([20] * 10)
    assert ingest.compensate_fifo(trace, log) is trace


def test_dropped_sample_is_duplicated_at_segment_midpoint():
    sizes = [20] * 10
    sizes[4] = 19
    trace, log = fifo_fixture(sizes)
    out, new_log = ingest.compensate_fifo_log(trace, log)
    assert len(out) == len(trace) + 1
    lo = sum(sizes[:4])
    mid = lo + sizes[4] // 2
    want = np.insert(trace.samples, mid, trace.samples[mid - 1], axis=0)
    assert np.array_equal(out.samples, want)
    check_within_one(out, new_log)


def test_duplicated_sample_is_removed_at_segment_midpoint():
    sizes = [20] * 10
    sizes[6] = 21
    trace, log = fifo_fixture(sizes)
    out, new_log = ingest.compensate_fifo_log(trace, log)
    assert len(out) == len(trace) - 1
    lo = sum(sizes[:6])
    mid = lo + 21 // 2
    assert np.array_equal(out.samples, np.delete(trace.samples, mid, axis=0))
    check_within_one(out, new_log)


@pytest.mark.parametrize("gap", [1, 2])
def test_boundary_straddling_sample_is_left_alone(gap):
    sizes = [20] * 10
    sizes[3] = 19
    sizes[3 + gap] = 21
    trace, log = fifo_fixture(sizes)
    assert ingest.compensate_fifo(trace, log) is trace


def test_distant_opposite_errors_are_both_fixed():
    sizes = [20] * 12
    sizes[2] = 19
    sizes[9] = 21
    trace, log = fifo_fixture(sizes)
    out, new_log = ingest.compensate_fifo_log(trace, log)
    assert len(out) == len(trace)
    assert not np.array_equal(out.samples, trace.samples)
    check_within_one(out, new_log)


def test_discrepancy_beyond_fifo_depth_raises():
    sizes = [20] * 5
    sizes[2] = 60
    trace, log = fifo_fixture(sizes)
    with pytest.raises(ValueError, match="FIFO depth"):
        ingest.compensate_fifo(trace, log, fifo_depth=32)


def test_last_readout_must_match_length():
    trace, log = fifo_fixture([20] * 4)
    with pytest.raises(ValueError):
        ingest.compensate_fifo(trace, log[:-1] + (FifoReadout(log[-1].t_s, 79),))


@given(st.lists(st.integers(17, 23), min_size=2, max_size=40))
def test_compensation_bounds_and_idempotence(sizes):
    trace, log = fifo_fixture(sizes)
    out, new_log = ingest.compensate_fifo_log(trace, log)
    check_within_one(out, new_log)
    again, again_log = ingest.compensate_fifo_log(out, new_log)
    assert np.array_equal(again.samples, out.samples)
    assert again_log == new_log


def test_resample_same_rate_is_identity():
    tr = pressure_trace(np.linspace(1000, 2000, 50))
    assert ingest.resample_linear(tr, 10.0) is tr


@given(st.floats(1.0, 500.0), st.floats(1.0, 500.0))
def test_resample_ramp_exact(src, dst):
    n = 200
    tr = accel_trace(np.column_stack([np.arange(n) / src] * 3), rate=src)
    out = ingest.resample_linear(tr, dst)
    t = np.arange(len(out)) / dst
    assert np.allclose(out.samples[:, 0], t, atol=1e-9)
    assert out.samples[0, 0] == tr.samples[0, 0]
    assert t[-1] <= (n - 1) / src + 1e-9


def test_resample_sine_128_to_200():
    t = np.arange(1280) / 128.0
    tr = accel_trace(np.column_stack([np.sin(2 * np.pi * t)] * 3))
    out = ingest.resample_linear(tr, 200.0)
    t_out = np.arange(len(out)) / 200.0
    assert np.max(np.abs(out.samples[:, 0] - np.sin(2 * np.pi * t_out))) < 1e-3
    assert out.sample_rate_hz == 200.0


def test_resample_needs_two_samples():
    with pytest.raises(ValueError):
        ingest.resample_linear(pressure_trace([1000.0]), 5.0)


def test_round_trip_is_bit_exact(tmp_path, rng):
    p = pressure_trace(101325 + rng.normal(0, 50, 300), start=12.345678912)
    a = accel_trace(rng.normal(size=(1000, 3)), rate=128.0, start=12.3, name="hi")
    b = accel_trace(rng.normal(size=(800, 3)), rate=200.0, start=12.4, name="lo", triggered=False)
    log = (FifoReadout(12.4, 0), FifoReadout(13.4, 199), FifoReadout(16.4, 800))
    rec = Recording("dev", p, (a, b), {"lo": log}, {"note": "x", "sensors": {"hi": {"resolution_g": 4e-6}}})
    ingest.write_recording(rec, tmp_path / "dev")
    back = ingest.read_recording(tmp_path / "dev")
    assert back == rec
    assert back.pressure.samples.tobytes() == rec.pressure.samples.tobytes()
    ingest.write_recording(back, tmp_path / "again")
    for name in ("meta.json", "pressure.csv", "hi.csv", "lo.csv", "lo.fifo.csv"):
        assert (tmp_path / "dev" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_missing_pressure_reported(tmp_path):
    rec = make_recording(n_a=100)
    ingest.write_recording(rec, tmp_path / "r")
    meta = json.loads((tmp_path / "r" / "meta.json").read_text())
    meta["sensors"] = [s for s in meta["sensors"] if s["kind"] != TraceKind.PRESSURE.value]
    (tmp_path / "r" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ingest.IngestError, match="recording lacks pressure trace"):
        ingest.read_recording(tmp_path / "r")


def test_decreasing_fifo_count_names_row(tmp_path):
    rec = make_recording(n_a=256, fifo=True)
    ingest.write_recording(rec, tmp_path / "r")
    path = tmp_path / "r" / "acc.fifo.csv"
    path.write_text("t,total_samples\n0.0,0\n0.5,100\n1.0,90\n2.0,256\n")
    with pytest.raises(ingest.IngestError, match=r"acc\.fifo\.csv: row 3 field 'total_samples' decreases"):
        ingest.read_recording(tmp_path / "r")


def test_rate_mismatch_reported(tmp_path):
    rec = make_recording()
    ingest.write_recording(rec, tmp_path / "r")
    meta = json.loads((tmp_path / "r" / "meta.json").read_text())
    meta["sensors"][0]["sample_rate_hz"] = 20.0
    (tmp_path / "r" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ingest.IngestError, match=r"pressure\.csv: row 2 field 't'"):
        ingest.read_recording(tmp_path / "r")


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda m: m.pop("device_id"), "device_id"),
        (lambda m: m["sensors"][0].pop("unit"), "lacks field 'unit'"),
        (lambda m: m["sensors"][0].update(kind="sonar"), "kind 'sonar' unknown"),
        (lambda m: m["sensors"][0].update(sample_rate_hz=-1), "must be positive"),
    ],
)
def test_malformed_metadata(tmp_path, mutate, message):
    ingest.write_recording(make_recording(), tmp_path / "r")
    meta = json.loads((tmp_path / "r" / "meta.json").read_text())
    mutate(meta)
    (tmp_path / "r" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ingest.IngestError, match=message):
        ingest.read_recording(tmp_path / "r")


def test_bad_header(tmp_path):
    ingest.write_recording(make_recording(), tmp_path / "r")
    path = tmp_path / "r" / "pressure.csv"
    path.write_text("time,value\n" + path.read_text().split("\n", 1)[1])
    with pytest.raises(ingest.IngestError, match="header"):
        ingest.read_recording(tmp_path / "r")


def test_missing_directory():
    with pytest.raises(FileNotFoundError):
        ingest.read_recording("/nonexistent/recording")


def test_read_with_compensation(tmp_path):
    sizes = [20] * 8
    sizes[3] = 19
    trace, log = fifo_fixture(sizes)
    rec = Recording("d", pressure_trace(np.full(20, 1e5)), (trace,), {trace.name: log})
    ingest.write_recording(rec, tmp_path / "r")
    fixed = ingest.read_recording(tmp_path / "r", compensate=True)
    assert len(fixed.accel[0]) == len(trace) + 1
    assert fixed.fifo_logs[trace.name][-1].total_samples == len(trace) + 1
