"""
Pressure stage: reject recordings that were not made at the same time and
estimate a constant pre-alignment lag.

Rejection compares absolute pressure (sensor offsets included); alignment
only uses relative changes, so it is blind to constant sensor offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d

from . import kernels
from .model import LagEstimate, Method, SensorTrace, Verdict


@dataclass(frozen=True)
class Stage1Config:
    rejection_threshold_pa: float = 100.0
    method: Method = Method.DELTA_STD
    huber_delta_pa: float = 100.0
    lowpass_window_s: float = 2.0
    #: Lag bounds in seconds (``t2 - t1``); None scans every admissible lag.
    search_range_s: tuple[float, float] | None = None
    #: Required overlap as a fraction of the shorter trace.
    min_overlap_fraction: float = 1.0
    #: Below this overlap no verdict is given.
    min_overlap_s: float = 60.0
    #: A low-passed trace must vary this many times more than its own
    #: white noise would after the same filter, or it cannot be aligned.
    min_variation_ratio: float = 1.5

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.method not in (Method.DELTA_STD, Method.DELTA_ERROR):
            raise ValueError(f"pre-alignment method must be delta_std or delta_error, not {self.method.value}")
        for name in ("rejection_threshold_pa", "huber_delta_pa", "lowpass_window_s", "min_overlap_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.5 <= self.min_overlap_fraction <= 1.0:
            raise ValueError("min_overlap_fraction must lie in [0.5, 1.0]")
        if self.search_range_s is not None:
            lo, hi = self.search_range_s
            if lo > hi:
                raise ValueError("search_range_s must be (min, max)")


@dataclass(frozen=True)
class SimultaneityCheck:
    verdict: Verdict
    statistic_pa: float
    best_lag: LagEstimate | None

    @property
    def simultaneous(self) -> bool:
        return self.verdict is Verdict.SIMULTANEOUS


class PrealignmentError(ValueError):
    pass


def rejection_probability(sigma_pa: float, A_pa: float) -> float:
    """Chance that two independent pressure readings differ by more than ``2 A``.

    With ``X1 - X2 ~ N(0, 2 sigma^2)``, ``P(|X1 - X2| <= 2A) = erf(A / sigma)``;
    this returns the complement ``erfc(A / sigma)``. For sigma = 928 Pa and
    A = 100 Pa that is about 0.879 (the acceptance mass is about 0.121).
    """
    if not sigma_pa > 0:
        raise ValueError("sigma_pa must be positive")
    if A_pa < 0:
        raise ValueError("A_pa must be non-negative")
    return math.erfc(A_pa / sigma_pa)


def acceptance_probability(sigma_pa: float, A_pa: float) -> float:
    """``P(|X1 - X2| <= 2A)``, the Gaussian integral over ``[-2A, 2A]``."""
    return 1.0 - rejection_probability(sigma_pa, A_pa)


def _check_rates(p1: SensorTrace, p2: SensorTrace) -> float:
    if p1.sample_rate_hz != p2.sample_rate_hz:
        raise ValueError(
            f"pressure rates differ ({p1.sample_rate_hz} vs {p2.sample_rate_hz} Hz); resample first"
        )
    return p1.sample_rate_hz


def _lag_window(p1, p2, cfg):
    """Integer lag range and minimum overlap (samples) for a trace pair."""
    rate = _check_rates(p1, p2)
    min_overlap = max(2, math.ceil(cfg.min_overlap_fraction * min(len(p1), len(p2)) - 1e-9))
    m_range = None
    base = p2.start_time_s - p1.start_time_s
    if cfg.search_range_s is not None:
        lo, hi = cfg.search_range_s
        m_range = kernels.lag_range_samples((lo - base, hi - base), rate)
    return rate, base, min_overlap, m_range


def check_simultaneous(p1: SensorTrace, p2: SensorTrace, cfg: Stage1Config = Stage1Config()) -> SimultaneityCheck:
    """Minimum over lags of the mean absolute pressure difference, against the threshold."""
    rate, base, min_overlap, m_range = _lag_window(p1, p2, cfg)
    if min_overlap / rate < cfg.min_overlap_s:
        return SimultaneityCheck(Verdict.INSUFFICIENT, float("nan"), None)
    try:
        est = kernels.mean_abs_minimum(p1.samples, p2.samples, rate, m_range, min_overlap)
    except ValueError:
        return SimultaneityCheck(Verdict.INSUFFICIENT, float("nan"), None)
    est = est.shifted(base)
    verdict = Verdict.SIMULTANEOUS if est.score <= cfg.rejection_threshold_pa else Verdict.REJECTED
    return SimultaneityCheck(verdict, est.score, est)


def lowpass(x: np.ndarray, window_samples: int) -> np.ndarray:
    """Centered moving average (zero phase); edges use the nearest sample."""
    w = max(1, int(window_samples))
    if w % 2 == 0:
        w += 1
    return uniform_filter1d(np.asarray(x, dtype=np.float64), size=w, mode="nearest")


def _varies(raw, smooth, width, ratio) -> bool:
    """Whether the low-passed trace shows more than filtered white noise."""
    # sample-to-sample differences are dominated by white noise
    noise_sd = np.std(np.diff(raw)) / math.sqrt(2.0)
    w = max(1, int(width)) | 1
    return smooth.std() > ratio * noise_sd / math.sqrt(w)


def _zscore(x):
    sd = x.std()
    return (x - x.mean()) / sd, sd


def prealign(p1: SensorTrace, p2: SensorTrace, cfg: Stage1Config = Stage1Config()) -> LagEstimate:
    """Constant lag ``t2 - t1`` from the pressure traces."""
    rate, base, min_overlap, m_range = _lag_window(p1, p2, cfg)
    width = round(cfg.lowpass_window_s * rate)
    smooth1 = lowpass(p1.samples, width)
    smooth2 = lowpass(p2.samples, width)
    for raw, s in ((p1.samples, smooth1), (p2.samples, smooth2)):
        if not _varies(raw, s, width, cfg.min_variation_ratio):
            raise PrealignmentError("no pressure variation; pre-alignment impossible")
    if cfg.method is Method.DELTA_STD:
        scan = kernels.delta_std_scan(p1.samples, p2.samples, m_range, min_overlap)
    else:
        z1, sd1 = _zscore(smooth1)
        z2, _ = _zscore(smooth2)
        # keep delta in pascal: express it in units of trace 1's spread
        scan = kernels.delta_error_scan(z1, z2, m_range, cfg.huber_delta_pa / sd1, min_overlap)
    return kernels.best_lag(scan, rate).shifted(base)
