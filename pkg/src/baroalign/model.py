"""
Domain types shared by every stage, and the linear clock model.

Sign convention (used everywhere in the package): a lag is ``t2 - t1``,
the device-2 clock reading minus the device-1 clock reading for the same
physical instant. A positive lag means device 2's clock runs ahead, so an
event stamped ``t2`` on device 2 happened at ``t1 = t2 - lag`` on device 1.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

#: Fitted skews beyond this magnitude are treated as failed fits.
MAX_ABS_SKEW = 1e-3


class TraceKind(str, enum.Enum):
    PRESSURE = "pressure"
    ACCEL3 = "accel3"
    MAGNITUDE = "magnitude"  # derived scalar series, e.g. acceleration norm


class Verdict(str, enum.Enum):
    SIMULTANEOUS = "simultaneous"
    REJECTED = "rejected"
    INSUFFICIENT = "insufficient data"


@dataclass(frozen=True, eq=False)
class SensorTrace:
    """Uniformly sampled series; sample ``n`` sits at ``start_time_s + n / sample_rate_hz``."""

    kind: TraceKind
    sample_rate_hz: float
    start_time_s: float
    samples: np.ndarray
    name: str = ""
    unit: str = ""
    externally_triggered: bool = True

    def __post_init__(self):
        kind = TraceKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if kind is TraceKind.PRESSURE:
            if samples.ndim != 1:
                raise ValueError("pressure samples must be one-dimensional")
            if samples.size and not (np.all(np.isfinite(samples)) and np.all(samples > 0)):
                raise ValueError("pressure samples must be finite and strictly positive")
        elif kind is TraceKind.MAGNITUDE:
            if samples.ndim != 1:
                raise ValueError("magnitude samples must be one-dimensional")
        elif samples.ndim != 2 or samples.shape[1] != 3:
            raise ValueError("accel3 samples must have shape (n, 3)")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SensorTrace):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.sample_rate_hz == other.sample_rate_hz
            and self.start_time_s == other.start_time_s
            and self.name == other.name
            and self.unit == other.unit
            and self.externally_triggered == other.externally_triggered
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
        )

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    @property
    def end_time_s(self) -> float:
        """Time stamp of the last sample."""
        return self.start_time_s + (len(self) - 1) / self.sample_rate_hz

    @property
    def midpoint_s(self) -> float:
        return 0.5 * (self.start_time_s + self.end_time_s)

    def times(self) -> np.ndarray:
        return self.start_time_s + np.arange(len(self)) / self.sample_rate_hz


@dataclass(frozen=True)
class FifoReadout:
    t_s: float
    total_samples: int


@dataclass(frozen=True, eq=False)
class Recording:
    device_id: str
    pressure: SensorTrace | None
    accel: tuple[SensorTrace, ...] = ()
    fifo_logs: dict[str, tuple[FifoReadout, ...]] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "accel", tuple(self.accel))
        object.__setattr__(
            self, "fifo_logs", {k: tuple(v) for k, v in self.fifo_logs.items()}
        )
        if self.pressure is None:
            raise ValueError("recording lacks pressure trace")
        if self.pressure.kind is not TraceKind.PRESSURE:
            raise ValueError("pressure trace must have kind 'pressure'")
        if not self.pressure.name:
            object.__setattr__(self, "pressure", replace(self.pressure, name="pressure"))
        names = [a.name for a in self.accel]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate accelerometer names: {names}")
        for a in self.accel:
            if a.kind is not TraceKind.ACCEL3:
                raise ValueError(f"accel trace {a.name!r} must have kind 'accel3'")
            has_log = a.name in self.fifo_logs
            if a.externally_triggered and has_log:
                raise ValueError(f"sensor {a.name!r} is externally triggered but carries a FIFO log")
            if not a.externally_triggered and not has_log:
                raise ValueError(f"sensor {a.name!r} is not externally triggered and lacks a FIFO log")
        for name, log in self.fifo_logs.items():
            if name not in names:
                raise ValueError(f"FIFO log for unknown sensor {name!r}")
            validate_fifo_log(log, name)

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.device_id == other.device_id
            and self.pressure == other.pressure
            and self.accel == other.accel
            and self.fifo_logs == other.fifo_logs
            and self.metadata == other.metadata
        )

    def accel_by_name(self, name: str) -> SensorTrace:
        for a in self.accel:
            if a.name == name:
                return a
        raise KeyError(name)


def validate_fifo_log(log, name: str = "") -> None:
    for i in range(1, len(log)):
        if not log[i].t_s > log[i - 1].t_s:
            raise ValueError(f"FIFO log {name!r} row {i}: timestamps not strictly increasing")
        if log[i].total_samples < log[i - 1].total_samples:
            raise ValueError(f"FIFO log {name!r} row {i}: total_samples decreases")


@dataclass(frozen=True)
class ClockModel:
    """Linear lag ``t2 - t1`` as a function of device-1 time."""

    offset_s: float
    skew: float
    reference_time_s: float = 0.0

    def lag_at(self, t):
        return lag_at(self, t)

    @property
    def skew_ppm(self) -> float:
        return self.skew * 1e6

    def inverse(self) -> ClockModel:
        """Model of ``t1 - t2`` as a function of device-2 time."""
        ref2 = self.reference_time_s + self.offset_s
        return ClockModel(
            offset_s=-self.offset_s,
            skew=-self.skew / (1.0 + self.skew),
            reference_time_s=ref2,
        )

    def to_device1(self, t2):
        """Map device-2 time stamps onto the device-1 axis (exact inverse of the linear model)."""
        t2 = np.asarray(t2, dtype=np.float64)
        out = (t2 - self.offset_s + self.skew * self.reference_time_s) / (1.0 + self.skew)
        return out if out.ndim else float(out)


def lag_at(model: ClockModel, t):
    """Lag ``t2 - t1`` at device-1 time ``t`` (scalar or array)."""
    return model.offset_s + model.skew * (t - model.reference_time_s)


class Method(str, enum.Enum):
    XCORR = "xcorr"
    XCOV = "xcov"
    DELTA_ERROR = "delta_error"
    DELTA_STD = "delta_std"
    MEAN_ABS = "mean_abs"


@dataclass(frozen=True)
class LagEstimate:
    lag_s: float
    score: float
    maximize: bool
    method: Method
    search_range_s: tuple[float, float]
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        lo, hi = self.search_range_s
        object.__setattr__(self, "search_range_s", (float(lo), float(hi)))
        if not lo - 1e-9 <= self.lag_s <= hi + 1e-9:
            raise ValueError(f"lag {self.lag_s} outside search range {self.search_range_s}")

    def shifted(self, seconds: float) -> LagEstimate:
        lo, hi = self.search_range_s
        return replace(self, lag_s=self.lag_s + seconds, search_range_s=(lo + seconds, hi + seconds))


@dataclass(frozen=True)
class WindowLag:
    t_center_s: float
    lag_s: float
    used_in_fit: bool = True


@dataclass(frozen=True)
class AlignmentReport:
    verdict: Verdict
    rejection_statistic_pa: float
    stage1_lag: LagEstimate | None = None
    window_lags: tuple[WindowLag, ...] = ()
    clock_model: ClockModel | None = None
    selected_n_win: int = 0
    adjusted_r2: float = float("nan")
    warnings: tuple[str, ...] = ()
    device_ids: tuple[str, str] = ("", "")

    @property
    def simultaneous(self) -> bool:
        return self.verdict is Verdict.SIMULTANEOUS


def compose_time_axes(rec_a: Recording, rec_b: Recording, model: ClockModel) -> Recording:
    """Re-stamp ``rec_b`` onto ``rec_a``'s time axis.

    Each trace's first sample is mapped through the exact inverse of the
    linear lag model and the sample rate is rescaled to device-1 seconds.
    FIFO timestamps are mapped the same way.
    """
    if not abs(model.skew) < MAX_ABS_SKEW:
        raise ValueError(f"skew {model.skew:g} violates |skew| < {MAX_ABS_SKEW:g}")
    if model.offset_s == 0.0 and model.skew == 0.0:
        return rec_b

    def restamp(tr: SensorTrace) -> SensorTrace:
        return replace(
            tr,
            start_time_s=model.to_device1(tr.start_time_s),
            sample_rate_hz=tr.sample_rate_hz * (1.0 + model.skew),
        )

    logs = {
        name: tuple(FifoReadout(model.to_device1(r.t_s), r.total_samples) for r in log)
        for name, log in rec_b.fifo_logs.items()
    }
    meta = dict(rec_b.metadata)
    applied = list(meta.get("applied_clock_models", []))
    applied.append(
        {
            "reference_device": rec_a.device_id,
            "offset_s": model.offset_s,
            "skew": model.skew,
            "reference_time_s": model.reference_time_s,
        }
    )
    meta["applied_clock_models"] = applied
    return Recording(
        device_id=rec_b.device_id,
        pressure=restamp(rec_b.pressure),
        accel=tuple(restamp(a) for a in rec_b.accel),
        fifo_logs=logs,
        metadata=meta,
    )
