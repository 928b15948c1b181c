"""
Recording directories, FIFO length compensation and linear resampling.

A recording directory holds ``meta.json``, one ``<sensor>.csv`` per sensor
and a ``<sensor>.fifo.csv`` for every sensor that free-runs on its own
clock instead of being triggered by the RTC.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from .model import FifoReadout, Recording, SensorTrace, TraceKind

log = logging.getLogger(__name__)

PRESSURE_NAME = "pressure"
DEFAULT_FIFO_DEPTH = 32
#: Readout intervals within which an insertion and a deletion cancel.
PROXIMITY_READOUTS = 2


class IngestError(ValueError):
    """Malformed recording directory; the message names file and field."""


def expected_length(t_n: float, t_0: float, f_sensor: float, l_t0: float) -> float:
    """Samples a free-running sensor should have delivered by RTC time ``t_n``."""
    return (t_n - t_0) * f_sensor + l_t0


def _segment_corrections(readouts, f_sensor, fifo_depth):
    t = np.array([r.t_s for r in readouts], dtype=np.float64)
    lengths = np.array([r.total_samples for r in readouts], dtype=np.int64)
    target = np.rint(expected_length(t, t[0], f_sensor, lengths[0])).astype(np.int64)
    deficit = target - lengths
    corr = np.diff(deficit, prepend=0)
    too_big = np.flatnonzero(np.abs(corr) > fifo_depth)
    if too_big.size:
        i = int(too_big[0])
        raise ValueError(
            f"FIFO readout {i} (t={t[i]:.6f}): discrepancy of {int(corr[i])} samples "
            f"exceeds FIFO depth {fifo_depth}; log is corrupt"
        )
    return lengths, corr


def _cancel_pairs(corr, window):
    """Skip insert/delete pairs that lie within ``window`` readouts of each other.

    A pair is only skipped while every readout in between stays within one
    sample of its target length.
    """
    applied = corr.copy()
    held = 0  # target minus corrected length at readout n - 1
    last = len(applied) - 1
    for n in range(1, last + 1):
        while applied[n] != 0:
            sign = 1 if applied[n] > 0 else -1
            partner = next(
                (j for j in range(n + 1, min(n + window, last) + 1) if applied[j] * sign < 0),
                None,
            )
            if partner is None:
                break
            applied[n] -= sign
            applied[partner] += sign
            h = held + np.cumsum(corr[n:partner + 1] - applied[n:partner + 1])
            if np.abs(h).max() > 1:
                applied[n] += sign
                applied[partner] -= sign
                break
        held += int(corr[n] - applied[n])
    return applied


def compensate_fifo_log(
    trace: SensorTrace,
    readouts,
    fifo_depth: int = DEFAULT_FIFO_DEPTH,
    proximity: int = PROXIMITY_READOUTS,
) -> tuple[SensorTrace, tuple[FifoReadout, ...]]:
    """Like :func:`compensate_fifo`, also returning the readout log of the corrected trace."""
    readouts = tuple(readouts)
    if len(readouts) < 2:
        return trace, readouts
    if readouts[-1].total_samples != len(trace):
        raise ValueError(
            f"last FIFO readout reports {readouts[-1].total_samples} samples, trace has {len(trace)}"
        )
    f_sensor = trace.sample_rate_hz
    lengths, corr = _segment_corrections(readouts, f_sensor, fifo_depth)
    applied = _cancel_pairs(corr, proximity)
    if not applied.any():
        return trace, readouts

    counts = np.ones(len(trace), dtype=np.int64)
    for n in np.flatnonzero(applied):
        lo, hi = int(lengths[n - 1]), int(lengths[n])
        k = int(applied[n])
        mid = lo + (hi - lo) // 2
        if k > 0:
            # duplicate the left neighbour of the segment midpoint
            src = max(mid - 1, 0)
            counts[src] += k
        else:
            k = -k
            start = mid - k // 2
            if start < lo or start + k > hi:
                raise ValueError(f"FIFO segment {n} holds {hi - lo} samples, cannot drop {k}")
            counts[start:start + k] = 0
    idx = np.repeat(np.arange(len(trace)), counts)
    new_lengths = lengths + np.cumsum(applied)
    new_log = tuple(FifoReadout(r.t_s, int(L)) for r, L in zip(readouts, new_lengths))
    return replace(trace, samples=trace.samples[idx]), new_log


def compensate_fifo(
    trace: SensorTrace,
    readouts,
    fifo_depth: int = DEFAULT_FIFO_DEPTH,
    proximity: int = PROXIMITY_READOUTS,
) -> SensorTrace:
    """Insert or drop samples so the trace keeps pace with the RTC.

    After the first readout, the cumulative sample count at readout ``n``
    should be ``round(expected_length(t_n, ...))``. Each readout segment
    that falls short gains duplicated samples at its midpoint; one that runs
    long loses midpoint samples. A shortfall followed within ``proximity``
    readouts by a surplus (or vice versa) is a sample that slipped across a
    readout boundary, and both corrections are skipped.
    """
    return compensate_fifo_log(trace, readouts, fifo_depth, proximity)[0]


def resample_linear(trace: SensorTrace, target_rate_hz: float) -> SensorTrace:
    """Linear interpolation onto a ``target_rate_hz`` grid starting at the first sample."""
    if not target_rate_hz > 0:
        raise ValueError("target_rate_hz must be positive")
    if len(trace) < 2:
        raise ValueError("resampling needs at least 2 samples")
    if target_rate_hz == trace.sample_rate_hz:
        return trace
    span = (len(trace) - 1) / trace.sample_rate_hz
    n_out = math.floor(span * target_rate_hz + 1e-9) + 1
    x_new = np.arange(n_out) / target_rate_hz
    x_old = np.arange(len(trace)) / trace.sample_rate_hz
    s = trace.samples
    if s.ndim == 1:
        out = np.interp(x_new, x_old, s)
    else:
        out = np.column_stack([np.interp(x_new, x_old, s[:, j]) for j in range(s.shape[1])])
    return replace(trace, samples=out, sample_rate_hz=float(target_rate_hz))


# --- directory format -------------------------------------------------------


def _sensor_entry(tr: SensorTrace, name: str) -> dict:
    return {
        "name": name,
        "kind": tr.kind.value,
        "sample_rate_hz": tr.sample_rate_hz,
        "start_time_s": tr.start_time_s,
        "unit": tr.unit,
        "externally_triggered": tr.externally_triggered,
    }


def _write_csv(path: Path, header: str, columns) -> None:
    cols = [np.asarray(c) for c in columns]
    rows = zip(*(c.tolist() for c in cols))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        # repr() of a Python float round-trips bit-exactly
        fh.writelines(f"{r[0]:.9f}," + ",".join(repr(v) for v in r[1:]) + "\n" for r in rows)


def write_recording(rec: Recording, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    traces = [(rec.pressure.name or PRESSURE_NAME, rec.pressure)] + [(a.name, a) for a in rec.accel]
    meta = {
        "device_id": rec.device_id,
        "sensors": [_sensor_entry(tr, name) for name, tr in traces],
        "metadata": rec.metadata,
    }
    with open(path / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    for name, tr in traces:
        t = tr.times()
        if tr.kind is TraceKind.PRESSURE:
            _write_csv(path / f"{name}.csv", "t,value", [t, tr.samples])
        else:
            s = tr.samples
            _write_csv(path / f"{name}.csv", "t,x,y,z", [t, s[:, 0], s[:, 1], s[:, 2]])
    for name, fifo in rec.fifo_logs.items():
        with open(path / f"{name}.fifo.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t,total_samples\n")
            fh.writelines(f"{r.t_s!r},{r.total_samples}\n" for r in fifo)
    return path


def _read_table(path: Path, header: str, ncols: int) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as fh:
            first = fh.readline().strip()
            if first != header:
                raise IngestError(f"{path}: header is {first!r}, expected {header!r}")
            data = np.loadtxt(fh, delimiter=",", dtype=np.float64, ndmin=2)
    except FileNotFoundError:
        raise IngestError(f"{path}: file missing") from None
    except ValueError as exc:
        if isinstance(exc, IngestError):
            raise
        raise IngestError(f"{path}: {exc}") from None
    if data.size == 0:
        data = data.reshape(0, ncols)
    if data.shape[1] != ncols:
        raise IngestError(f"{path}: expected {ncols} columns, found {data.shape[1]}")
    return data


_REQUIRED = ("name", "kind", "sample_rate_hz", "start_time_s", "unit", "externally_triggered")


def read_recording(path, compensate: bool = False, fifo_depth: int = DEFAULT_FIFO_DEPTH) -> Recording:
    """Load a recording directory.

    With ``compensate=True`` every free-running sensor is passed through
    :func:`compensate_fifo` and its FIFO log is updated to match.
    """
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"{path}: not a recording directory")
    meta_path = path / "meta.json"
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise IngestError(f"{meta_path}: file missing") from None
    except json.JSONDecodeError as exc:
        raise IngestError(f"{meta_path}: invalid JSON ({exc})") from None
    if not isinstance(meta, dict) or "device_id" not in meta:
        raise IngestError(f"{meta_path}: field 'device_id' missing")
    sensors = meta.get("sensors")
    if not isinstance(sensors, list):
        raise IngestError(f"{meta_path}: field 'sensors' missing or not a list")

    pressure = None
    accel = []
    logs = {}
    for i, entry in enumerate(sensors):
        for key in _REQUIRED:
            if key not in entry:
                raise IngestError(f"{meta_path}: sensors[{i}] lacks field {key!r}")
        name = entry["name"]
        try:
            kind = TraceKind(entry["kind"])
        except ValueError:
            raise IngestError(f"{meta_path}: sensors[{i}].kind {entry['kind']!r} unknown") from None
        rate = entry["sample_rate_hz"]
        if not isinstance(rate, (int, float)) or not rate > 0:
            raise IngestError(f"{meta_path}: sensors[{i}].sample_rate_hz must be positive")
        csv_path = path / f"{name}.csv"
        if kind is TraceKind.PRESSURE:
            data = _read_table(csv_path, "t,value", 2)
            samples = data[:, 1]
        else:
            data = _read_table(csv_path, "t,x,y,z", 4)
            samples = data[:, 1:4]
        start = float(entry["start_time_s"])
        grid = start + np.arange(data.shape[0]) / rate
        bad = np.flatnonzero(np.abs(data[:, 0] - grid) > 0.5 / rate)
        if bad.size:
            raise IngestError(
                f"{csv_path}: row {int(bad[0]) + 1} field 't' = {data[bad[0], 0]!r} is off the "
                f"{rate} Hz grid from start {start!r}; rate mismatch between meta.json and samples"
            )
        try:
            trace = SensorTrace(
                kind=kind,
                sample_rate_hz=float(rate),
                start_time_s=start,
                samples=samples,
                name=name,
                unit=entry["unit"],
                externally_triggered=bool(entry["externally_triggered"]),
            )
        except ValueError as exc:
            raise IngestError(f"{csv_path}: {exc}") from None
        if kind is TraceKind.PRESSURE:
            if pressure is not None:
                raise IngestError(f"{meta_path}: more than one pressure sensor")
            pressure = trace
        else:
            accel.append(trace)
        fifo_path = path / f"{name}.fifo.csv"
        if not trace.externally_triggered:
            table = _read_table(fifo_path, "t,total_samples", 2)
            readouts = []
            for row, (t, total) in enumerate(table, start=1):
                if total != int(total) or total < 0:
                    raise IngestError(f"{fifo_path}: row {row} field 'total_samples' is not a count")
                if readouts and not t > readouts[-1].t_s:
                    raise IngestError(f"{fifo_path}: row {row} field 't' not strictly increasing")
                if readouts and total < readouts[-1].total_samples:
                    raise IngestError(f"{fifo_path}: row {row} field 'total_samples' decreases")
                readouts.append(FifoReadout(float(t), int(total)))
            if readouts and readouts[-1].total_samples != len(trace):
                raise IngestError(
                    f"{fifo_path}: row {len(readouts)} field 'total_samples' = "
                    f"{readouts[-1].total_samples} but {csv_path.name} holds {len(trace)} samples"
                )
            logs[name] = tuple(readouts)
        elif fifo_path.exists():
            raise IngestError(f"{fifo_path}: present for externally triggered sensor {name!r}")

    if pressure is None:
        raise IngestError(f"{meta_path}: recording lacks pressure trace")
    if compensate:
        fixed = []
        for a in accel:
            if a.name in logs:
                a, logs[a.name] = compensate_fifo_log(a, logs[a.name], fifo_depth)
            fixed.append(a)
        accel = fixed
    return Recording(
        device_id=str(meta["device_id"]),
        pressure=pressure,
        accel=tuple(accel),
        fifo_logs=logs,
        metadata=meta.get("metadata", {}) or {},
    )
