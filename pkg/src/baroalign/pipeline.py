"""
End-to-end synchronization of recording pairs and groups, report
serialization and the cropping evaluation harness.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ingest, stage1, stage2
from .synth import read_ground_truth
from .model import (
    AlignmentReport,
    ClockModel,
    FifoReadout,
    LagEstimate,
    Recording,
    SensorTrace,
    Verdict,
    WindowLag,
    compose_time_axes,
)

log = logging.getLogger(__name__)

NO_ACCEL_WARNING = "no accelerometer; refinement skipped"
EVAL_COLUMNS = ("scenario", "duration_s", "n_pairs", "median_err_s", "p10_err_s", "p90_err_s")


@dataclass(frozen=True)
class PipelineConfig:
    stage1: stage1.Stage1Config = field(default_factory=stage1.Stage1Config)
    stage2: stage2.Stage2Config = field(default_factory=stage2.Stage2Config)
    #: Accelerometer to use on both devices; None picks the finest resolution.
    accel_sensor: str | None = None


class PipelineError(ValueError):
    """Failure inside one processing stage; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


# --- pairs --------------------------------------------------------------------


def _common_rate(a: SensorTrace, b: SensorTrace) -> tuple[SensorTrace, SensorTrace]:
    rate = min(a.sample_rate_hz, b.sample_rate_hz)
    return ingest.resample_linear(a, rate), ingest.resample_linear(b, rate)


def _resolution(rec: Recording, name: str) -> float:
    try:
        return float(rec.metadata["sensors"][name]["resolution_g"])
    except (KeyError, TypeError, ValueError):
        return math.inf


def _finest(rec: Recording, names) -> str:
    # finest LSB first, then declaration order
    order = {a.name: i for i, a in enumerate(rec.accel)}
    return min(names, key=lambda n: (_resolution(rec, n), order[n]))


def pick_accelerometers(rec1: Recording, rec2: Recording, preferred: str | None = None):
    """Names of the accelerometers to pair, plus warnings; None when either device has none."""
    if not rec1.accel or not rec2.accel:
        return None, [NO_ACCEL_WARNING]
    names1 = [a.name for a in rec1.accel]
    names2 = [a.name for a in rec2.accel]
    if preferred is not None:
        for rec, names in ((rec1, names1), (rec2, names2)):
            if preferred not in names:
                raise PipelineError("refinement", f"device {rec.device_id!r} has no accelerometer {preferred!r}")
        return (preferred, preferred), []
    common = [n for n in names1 if n in names2]
    if common:
        name = min(common, key=lambda n: (max(_resolution(rec1, n), _resolution(rec2, n)), names1.index(n)))
        return (name, name), []
    n1, n2 = _finest(rec1, names1), _finest(rec2, names2)
    return (n1, n2), [f"pairing different accelerometers {n1!r} and {n2!r}"]


def synchronize_pair(rec1: Recording, rec2: Recording, cfg: PipelineConfig = PipelineConfig()) -> AlignmentReport:
    """Reject or align ``rec2`` against ``rec1``.

    The report's clock model gives ``t2 - t1`` as a function of device-1 time.
    """
    ids = (rec1.device_id, rec2.device_id)
    try:
        p1, p2 = _common_rate(rec1.pressure, rec2.pressure)
        check = stage1.check_simultaneous(p1, p2, cfg.stage1)
    except ValueError as exc:
        raise PipelineError("rejection", str(exc)) from exc
    if check.verdict is Verdict.INSUFFICIENT:
        return AlignmentReport(
            Verdict.INSUFFICIENT, check.statistic_pa,
            warnings=(f"overlap shorter than {cfg.stage1.min_overlap_s:g} s; no verdict",),
            device_ids=ids,
        )
    if check.verdict is Verdict.REJECTED:
        return AlignmentReport(Verdict.REJECTED, check.statistic_pa, device_ids=ids)

    try:
        est = stage1.prealign(p1, p2, cfg.stage1)
    except ValueError as exc:
        raise PipelineError("pre-alignment", str(exc)) from exc
    warnings = list(est.warnings)

    names, w = pick_accelerometers(rec1, rec2, cfg.accel_sensor)
    warnings.extend(w)
    if names is None:
        ref = stage2.overlap_midpoint(p1, p2, est.lag_s)
        return AlignmentReport(
            Verdict.SIMULTANEOUS, check.statistic_pa, stage1_lag=est,
            clock_model=ClockModel(float(est.lag_s), 0.0, float(ref)),
            warnings=tuple(warnings), device_ids=ids,
        )
    try:
        m1 = stage2.accel_magnitude(rec1.accel_by_name(names[0]))
        m2 = stage2.accel_magnitude(rec2.accel_by_name(names[1]))
        m1, m2 = _common_rate(m1, m2)
        res = stage2.refine(m1, m2, est, cfg.stage2)
    except ValueError as exc:
        raise PipelineError("refinement", str(exc)) from exc
    warnings.extend(res.warnings)

    lags, n_win, adj = (), 0, float("nan")
    if res.chosen is not None:
        c = res.chosen
        lags = tuple(
            WindowLag(float(t), float(y), bool(u)) for t, y, u in zip(c.t_center_s, c.lag_s, c.inliers)
        )
        n_win, adj = c.n_win, float(c.adjusted_r2)
    return AlignmentReport(
        Verdict.SIMULTANEOUS, check.statistic_pa, stage1_lag=est, window_lags=lags,
        clock_model=res.clock_model, selected_n_win=n_win, adjusted_r2=adj,
        warnings=tuple(warnings), device_ids=ids,
    )


# --- groups -------------------------------------------------------------------


@dataclass(frozen=True)
class GroupResult:
    reference_id: str
    #: One report per non-reference member, in input order.
    reports: tuple[AlignmentReport, ...]
    #: Reference first, then every accepted member re-stamped onto its axis.
    aligned: tuple[Recording, ...]
    excluded: tuple[str, ...]
    errors: dict[str, str] = field(default_factory=dict)


def _pair_task(args):
    ref, rec, cfg = args
    try:
        return synchronize_pair(ref, rec, cfg), None
    except PipelineError as exc:
        return None, str(exc)


def _pool_map(fn, tasks, jobs):
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    # fork is unsafe once the numba threading layer is running
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks)), mp_context=ctx) as pool:
        return list(pool.map(fn, tasks))


def synchronize_group(recs, cfg: PipelineConfig = PipelineConfig(), jobs: int | None = 1) -> GroupResult:
    """Align every recording against the longest one.

    Members rejected against the reference, or failing, are excluded.
    Raises PipelineError when fewer than two recordings remain.
    """
    recs = list(recs)
    if len(recs) < 2:
        raise PipelineError("group", f"need at least 2 recordings, got {len(recs)}")
    ids = [r.device_id for r in recs]
    if len(set(ids)) != len(ids):
        raise PipelineError("group", f"duplicate device ids: {ids}")
    ref_idx = max(range(len(recs)), key=lambda i: (recs[i].pressure.duration_s, -i))
    ref = recs[ref_idx]
    others = [r for i, r in enumerate(recs) if i != ref_idx]
    results = _pool_map(_pair_task, [(ref, r, cfg) for r in others], jobs)

    reports, aligned, excluded, errors = [], [ref], [], {}
    for rec, (report, err) in zip(others, results):
        if report is None:
            errors[rec.device_id] = err
            excluded.append(rec.device_id)
            log.warning("excluding %s: %s", rec.device_id, err)
            continue
        reports.append(report)
        if report.simultaneous:
            aligned.append(compose_time_axes(ref, rec, report.clock_model))
        else:
            excluded.append(rec.device_id)
            log.info("excluding %s: %s", rec.device_id, report.verdict.value)
    if len(aligned) < 2:
        raise PipelineError("group", f"fewer than 2 mutually simultaneous recordings (reference {ref.device_id})")
    return GroupResult(ref.device_id, tuple(reports), tuple(aligned), tuple(excluded), errors)


# --- report serialization -------------------------------------------------------


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _unnum(x):
    return float("nan") if x is None else float(x)


def report_to_dict(report: AlignmentReport) -> dict:
    est, model = report.stage1_lag, report.clock_model
    out = {
        "simultaneous": report.simultaneous,
        "rejection_statistic_pa": _num(report.rejection_statistic_pa),
        "stage1_lag_s": None if est is None else est.lag_s,
        "offset_s": None if model is None else model.offset_s,
        "skew_ppm": None if model is None else model.skew_ppm,
        "reference_time_s": None if model is None else model.reference_time_s,
        "selected_n_win": report.selected_n_win,
        "adjusted_r2": _num(report.adjusted_r2),
        "window_lags": [[w.t_center_s, w.lag_s, w.used_in_fit] for w in report.window_lags],
        "warnings": list(report.warnings),
        "verdict": report.verdict.value,
        "device_ids": list(report.device_ids),
        "skew": None if model is None else model.skew,
        "stage1": None if est is None else {
            "lag_s": est.lag_s,
            "score": _num(est.score),
            "maximize": est.maximize,
            "method": est.method.value,
            "search_range_s": list(est.search_range_s),
            "warnings": list(est.warnings),
        },
    }
    return out


def report_from_dict(obj: dict) -> AlignmentReport:
    est = None
    if obj.get("stage1") is not None:
        s = obj["stage1"]
        est = LagEstimate(
            lag_s=s["lag_s"], score=_unnum(s["score"]), maximize=s["maximize"], method=s["method"],
            search_range_s=tuple(s["search_range_s"]), warnings=tuple(s["warnings"]),
        )
    model = None
    if obj.get("offset_s") is not None:
        skew = obj["skew"] if obj.get("skew") is not None else obj["skew_ppm"] * 1e-6
        model = ClockModel(obj["offset_s"], skew, obj["reference_time_s"])
    verdict = obj.get("verdict") or (Verdict.SIMULTANEOUS if obj["simultaneous"] else Verdict.REJECTED)
    return AlignmentReport(
        verdict=Verdict(verdict),
        rejection_statistic_pa=_unnum(obj["rejection_statistic_pa"]),
        stage1_lag=est,
        window_lags=tuple(WindowLag(float(t), float(y), bool(u)) for t, y, u in obj["window_lags"]),
        clock_model=model,
        selected_n_win=int(obj["selected_n_win"]),
        adjusted_r2=_unnum(obj["adjusted_r2"]),
        warnings=tuple(obj["warnings"]),
        device_ids=tuple(obj.get("device_ids", ("", ""))),
    )


def report_to_json(report: AlignmentReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, allow_nan=False) + "\n"


def report_from_json(text: str) -> AlignmentReport:
    return report_from_dict(json.loads(text))


# --- evaluation -------------------------------------------------------------------


def _crop_trace(tr: SensorTrace, t0: float, t1: float) -> tuple[SensorTrace, int]:
    r = tr.sample_rate_hz
    i0 = max(0, math.ceil((t0 - tr.start_time_s) * r - 1e-9))
    i1 = min(len(tr), math.ceil((t1 - tr.start_time_s) * r - 1e-9))
    if i1 - i0 < 2:
        raise ValueError(f"crop [{t0}, {t1}) leaves fewer than 2 samples of {tr.name!r}")
    return replace(tr, samples=tr.samples[i0:i1], start_time_s=tr.start_time_s + i0 / r), i0


def _crop_fifo_trace(tr: SensorTrace, log_, t0: float, t1: float):
    """Crop a free-running stream by its readout clock; the log is cut to match."""
    t = [r.t_s for r in log_]
    c = [r.total_samples for r in log_]
    if c[0] > 0 and tr.start_time_s < t[0]:
        t, c = [tr.start_time_s] + t, [0] + c
    t, c = np.array(t), np.array(c, dtype=np.float64)
    i0 = max(0, math.ceil(float(np.interp(t0, t, c)) - 1e-9))
    i1 = min(len(tr), math.ceil(float(np.interp(t1, t, c)) - 1e-9))
    if i1 - i0 < 2:
        raise ValueError(f"crop [{t0}, {t1}) leaves fewer than 2 samples of {tr.name!r}")
    kept = [FifoReadout(r.t_s, r.total_samples - i0) for r in log_ if 0 < r.total_samples - i0 < i1 - i0]
    start, stop = (float(np.interp(i, c, t)) for i in (i0, i1))
    if kept:
        start = min(start, kept[0].t_s - 1e-6)
        stop = max(stop, kept[-1].t_s + 1e-6)
    new_log = (FifoReadout(start, 0), *kept, FifoReadout(max(stop, start + 1e-6), i1 - i0))
    return replace(tr, samples=tr.samples[i0:i1], start_time_s=start), new_log


def crop_recording(rec: Recording, t0: float, t1: float) -> Recording:
    """Samples of every trace with device time in ``[t0, t1)``."""
    pressure, _ = _crop_trace(rec.pressure, t0, t1)
    accel, logs = [], {}
    for a in rec.accel:
        if a.name in rec.fifo_logs:
            cropped, logs[a.name] = _crop_fifo_trace(a, rec.fifo_logs[a.name], t0, t1)
        else:
            cropped, _ = _crop_trace(a, t0, t1)
        accel.append(cropped)
    return Recording(rec.device_id, pressure, tuple(accel), logs, dict(rec.metadata))


def splits(rec: Recording, duration_s: float, max_splits: int = 5) -> list[Recording]:
    """Up to ``max_splits`` consecutive non-overlapping crops of ``duration_s``."""
    n = min(max_splits, int(math.floor(rec.pressure.duration_s / duration_s + 1e-9)))
    t0 = rec.pressure.start_time_s
    return [crop_recording(rec, t0 + k * duration_s, t0 + (k + 1) * duration_s) for k in range(n)]


def midpoint_error(report: AlignmentReport, truth, rec1: Recording, rec2: Recording) -> float:
    """``|estimated - true lag|`` at the middle of the true overlap; inf without a model."""
    if report.clock_model is None:
        return math.inf
    true = truth.clock_model(rec1.device_id, rec2.device_id)
    lo = max(rec1.pressure.start_time_s, true.to_device1(rec2.pressure.start_time_s))
    hi = min(rec1.pressure.end_time_s, true.to_device1(rec2.pressure.end_time_s))
    t = 0.5 * (lo + hi)
    return abs(report.clock_model.lag_at(t) - true.lag_at(t))


def find_sessions(dataset_dir) -> list[Path]:
    root = Path(dataset_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    found = sorted(p.parent for p in root.rglob("ground_truth.json"))
    if not found:
        raise ValueError(f"dataset {root} has no ground_truth.json")
    return found


def _load_session(path: Path):
    truth = read_ground_truth(path / "ground_truth.json")
    recs = [ingest.read_recording(path / d, compensate=True) for d in truth.device_ids]
    return recs, truth


def _evaluate_session(args):
    path, durations, cfg, max_splits = args
    recs, truth = _load_session(Path(path))
    ref_idx = max(range(len(recs)), key=lambda i: (recs[i].pressure.duration_s, -i))
    ref = recs[ref_idx]
    out = []
    for d in durations:
        for k, rec in enumerate(recs):
            if k == ref_idx:
                continue
            for part in splits(rec, d, max_splits):
                try:
                    report = synchronize_pair(ref, part, cfg)
                    err = midpoint_error(report, truth, ref, part)
                except PipelineError as exc:
                    log.info("%s/%s %g s: %s", Path(path).name, rec.device_id, d, exc)
                    err = math.inf
                out.append((truth.scenario, float(d), err))
    return out


def evaluate(dataset_dir, durations_s, cfg: PipelineConfig = PipelineConfig(),
             jobs: int | None = 1, max_splits: int = 5) -> list[dict]:
    """Error table over every session below ``dataset_dir``.

    The longest recording of each session is kept whole; every other one is
    cut into up to ``max_splits`` non-overlapping crops per duration and
    aligned against it. Failed or rejected pairs count as infinite error.
    Cells without any pair have ``n_pairs == 0`` and empty statistics.
    """
    durations = [float(d) for d in durations_s]
    if not durations or min(durations) <= 0:
        raise ValueError("durations must be positive")
    sessions = find_sessions(dataset_dir)
    tasks = [(str(p), durations, cfg, max_splits) for p in sessions]
    scenarios = {read_ground_truth(p / "ground_truth.json").scenario for p in sessions}
    errors: dict[tuple[str, float], list[float]] = {}
    for rows in _pool_map(_evaluate_session, tasks, jobs):
        for scenario, d, err in rows:
            errors.setdefault((scenario, d), []).append(err)
    table = []
    for sc in sorted(scenarios):
        for d in durations:
            e = np.array(errors.get((sc, d), []), dtype=np.float64)
            row = {"scenario": sc, "duration_s": d, "n_pairs": int(e.size)}
            if e.size:
                p10, med, p90 = np.percentile(e, [10, 50, 90], method="inverted_cdf")
                row.update(median_err_s=float(med), p10_err_s=float(p10), p90_err_s=float(p90))
            else:
                row.update(median_err_s=None, p10_err_s=None, p90_err_s=None)
            table.append(row)
    return table


def table_to_csv(table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_COLUMNS)
    for row in table:
        w.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                    for c in EVAL_COLUMNS])
    return buf.getvalue()
