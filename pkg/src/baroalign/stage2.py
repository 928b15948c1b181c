"""
Accelerometer stage: windowed lag search around the pressure estimate,
a robust straight-line fit of lag against time, and selection of the window
count by adjusted r².
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import kernels
from .model import MAX_ABS_SKEW, ClockModel, LagEstimate, SensorTrace, TraceKind


@dataclass(frozen=True)
class Stage2Config:
    refinement_range_s: float = 5.0
    n_win_start: int = 4
    n_win_max: int = 512
    min_window_s: float = 1.0
    outlier_alpha: float = 0.05
    min_windows_for_fit: int = 3
    #: Fits whose inlier residual spread exceeds this carry no usable timing.
    max_residual_sd_s: float = 0.5
    #: A window counts only if its peak correlation coefficient reaches
    #: max(min_peak_correlation, peak_z / sqrt(window samples)).
    min_peak_correlation: float = 0.1
    peak_z: float = 5.0

    def __post_init__(self):
        if self.n_win_start < 2:
            raise ValueError("n_win_start must be at least 2")
        if self.n_win_max < self.n_win_start:
            raise ValueError("n_win_max must be >= n_win_start")
        if not self.refinement_range_s > 0:
            raise ValueError("refinement_range_s must be positive")
        if not self.min_window_s > 0:
            raise ValueError("min_window_s must be positive")
        if not 0 < self.outlier_alpha < 1:
            raise ValueError("outlier_alpha must lie in (0, 1)")
        if self.min_windows_for_fit < 3:
            raise ValueError("min_windows_for_fit must be at least 3")

    def schedule(self):
        n = self.n_win_start
        while n <= self.n_win_max:
            yield n
            n *= 2


@dataclass(frozen=True)
class OlsFit:
    offset_s: float  # fitted lag at reference_time_s
    skew: float
    reference_time_s: float
    r2: float
    adjusted_r2: float
    residuals: np.ndarray
    leverage: np.ndarray
    n: int

    @property
    def residual_sd(self) -> float:
        if self.n <= 2:
            return 0.0
        return math.sqrt(float(np.sum(self.residuals ** 2)) / (self.n - 2))


@dataclass(frozen=True)
class WindowFit:
    n_win: int
    t_center_s: np.ndarray
    lag_s: np.ndarray
    inliers: np.ndarray
    offset_s: float = float("nan")
    skew: float = float("nan")
    reference_time_s: float = float("nan")
    adjusted_r2: float = float("nan")
    residual_sd_s: float = float("nan")
    valid: bool = False
    reason: str = ""

    def lag_at(self, t):
        return self.offset_s + self.skew * (t - self.reference_time_s)


@dataclass(frozen=True)
class Refinement:
    clock_model: ClockModel
    chosen: WindowFit | None
    fits: tuple[WindowFit, ...]
    warnings: tuple[str, ...] = field(default=())


def accel_magnitude(trace: SensorTrace) -> SensorTrace:
    """Per-sample Euclidean norm of a 3-axis trace."""
    if trace.kind is not TraceKind.ACCEL3:
        raise ValueError("accel_magnitude needs a 3-axis trace")
    mag = np.sqrt(np.einsum("ij,ij->i", trace.samples, trace.samples))
    return replace(trace, kind=TraceKind.MAGNITUDE, samples=mag)


@dataclass(frozen=True)
class _Geometry:
    rate: float
    base: float  # start-time difference t2_start - t1_start
    m_lo: int
    m_hi: int
    n_lo: int  # first / one-past-last sample of trace 1 usable by every lag
    n_hi: int
    start1: float

    @property
    def n_samples(self) -> int:
        return self.n_hi - self.n_lo


def _geometry(a1: SensorTrace, a2: SensorTrace, prior_lag_s: float, range_s: float) -> _Geometry:
    if a1.sample_rate_hz != a2.sample_rate_hz:
        raise ValueError("accelerometer traces must share one sample rate; resample first")
    rate = a1.sample_rate_hz
    base = a2.start_time_s - a1.start_time_s
    m_lo, m_hi = kernels.lag_range_samples(
        (prior_lag_s - range_s - base, prior_lag_s + range_s - base), rate
    )
    n_lo = max(0, -m_lo)
    n_hi = min(len(a1), len(a2) - m_hi)
    return _Geometry(rate, base, m_lo, m_hi, n_lo, max(n_lo, n_hi), a1.start_time_s)


def _window_bounds(geo: _Geometry, n_win: int) -> np.ndarray:
    return geo.n_lo + np.round(np.linspace(0, geo.n_samples, n_win + 1)).astype(np.int64)


def window_lags(a1: SensorTrace, a2: SensorTrace, prior: LagEstimate | float,
                cfg: Stage2Config = Stage2Config(), n_win: int = 4):
    """Best lag per window within ``prior +- refinement_range_s``.

    The stretch of trace 1 that has a partner sample for every candidate lag
    is split into ``n_win`` equal windows. Each window, mean removed, is
    cross-correlated against the matching stretch of trace 2.

    Windows without variation, or whose correlation peak is no stronger
    than independent noise would produce, are skipped.

    Returns ``(points, warnings)`` with ``points`` a list of
    ``(t_center_s, lag_s)`` in device-1 time.
    """
    prior_lag = prior.lag_s if isinstance(prior, LagEstimate) else float(prior)
    geo = _geometry(a1, a2, prior_lag, cfg.refinement_range_s)
    if geo.n_samples <= 0:
        raise ValueError("traces do not overlap around the prior lag")
    f_all, g_all = a1.samples, a2.samples
    span = geo.m_hi - geo.m_lo
    bounds = _window_bounds(geo, n_win)
    points, flat, weak = [], 0, 0
    for a, b in zip(bounds[:-1], bounds[1:]):
        width = int(b - a)
        if width < 2:
            continue
        fw = f_all[a:b]
        gw = g_all[a + geo.m_lo:b + geo.m_hi]
        t_center = geo.start1 + 0.5 * (a + b - 1) / geo.rate
        if np.ptp(fw) == 0 or np.ptp(gw) == 0:
            flat += 1
            continue
        scan = kernels.cross_covariance_scan(fw, gw, (0, span), width)
        k = int(kernels.best_lag(scan, 1.0).lag_s)
        g_peak = gw[k:k + width]
        denom = fw.std() * g_peak.std()
        rho = scan.score_at(k) / denom if denom > 0 else 0.0
        if rho < max(cfg.min_peak_correlation, cfg.peak_z / math.sqrt(width)):
            weak += 1
            continue
        points.append((t_center, geo.base + (geo.m_lo + k) / geo.rate))
    warnings = []
    if flat:
        warnings.append(f"{flat} of {n_win} windows had no magnitude variation; skipped")
    if weak:
        warnings.append(f"{weak} of {n_win} windows had no distinct correlation peak; skipped")
    return points, warnings


def ols_fit(t, y, reference_time_s: float | None = None) -> OlsFit:
    """Least-squares line ``y = offset + skew * (t - reference)``."""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = t.shape[0]
    if n < 2 or np.all(t == t[0]):
        raise ValueError("degenerate fit: need at least two distinct time values")
    t_mean = t.mean()
    y_mean = y.mean()
    tc = t - t_mean
    stt = float(np.dot(tc, tc))
    skew = float(np.dot(tc, y - y_mean)) / stt
    resid = y - (y_mean + skew * tc)
    sse = float(np.dot(resid, resid))
    sst = float(np.dot(y - y_mean, y - y_mean))
    if sst == 0.0:
        r2 = 1.0
    else:
        r2 = 1.0 - sse / sst
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - 2) if n > 2 else float("nan")
    ref = t_mean if reference_time_s is None else float(reference_time_s)
    return OlsFit(
        offset_s=y_mean + skew * (ref - t_mean),
        skew=skew,
        reference_time_s=ref,
        r2=r2,
        adjusted_r2=adj,
        residuals=resid,
        leverage=1.0 / n + tc * tc / stt,
        n=n,
    )


def _studentized(fit: OlsFit, y_scale: float) -> np.ndarray:
    """Externally studentized residuals; +-inf where the rest of the data is exact."""
    e = fit.residuals
    h = fit.leverage
    df = fit.n - 3
    one_minus_h = np.maximum(1.0 - h, 0.0)
    sse = float(np.dot(e, e))
    with np.errstate(divide="ignore", invalid="ignore"):
        s2 = (sse - np.where(one_minus_h > 0, e * e / one_minus_h, 0.0)) / df
    tiny = (1e-12 * max(y_scale, 1e-300)) ** 2
    out = np.zeros_like(e)
    for i in range(fit.n):
        if one_minus_h[i] <= 1e-12:
            continue
        if s2[i] <= tiny:
            out[i] = math.copysign(math.inf, e[i]) if abs(e[i]) > math.sqrt(tiny) * 1e3 else 0.0
        else:
            out[i] = e[i] / math.sqrt(s2[i] * one_minus_h[i])
    return out


def bonferroni_outliers(t, y, alpha: float = 0.05, min_points: int = 3) -> np.ndarray:
    """Inlier mask after iterated Bonferroni outlier removal.

    Each round refits the line, takes the point with the largest externally
    studentized residual and drops it when ``n * two-sided p < alpha``.
    Stops when nothing is significant or ``min_points`` remain.
    """
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mask = np.ones(t.shape[0], dtype=bool)
    y_scale = float(np.max(np.abs(y))) if y.size else 1.0
    while mask.sum() > min_points:
        idx = np.flatnonzero(mask)
        n = idx.size
        if n - 3 <= 0 or np.all(t[idx] == t[idx[0]]):
            break
        fit = ols_fit(t[idx], y[idx])
        ts = _studentized(fit, max(y_scale, 1.0))
        worst = int(np.argmax(np.abs(ts)))
        p = 2.0 * stats.t.sf(abs(ts[worst]), n - 3)
        if not p * n < alpha:
            break
        mask[idx[worst]] = False
    return mask


def _fit_windows(points, n_win, cfg, reference_time_s) -> WindowFit:
    t = np.array([p[0] for p in points], dtype=np.float64)
    y = np.array([p[1] for p in points], dtype=np.float64)
    empty = WindowFit(n_win, t, y, np.ones(t.shape[0], dtype=bool))
    if t.shape[0] < cfg.min_windows_for_fit:
        return replace(empty, reason=f"only {t.shape[0]} usable windows")
    if t.shape[0] >= cfg.min_windows_for_fit + 1:
        mask = bonferroni_outliers(t, y, cfg.outlier_alpha, cfg.min_windows_for_fit)
    else:
        mask = np.ones(t.shape[0], dtype=bool)
    fit = ols_fit(t[mask], y[mask], reference_time_s)
    out = replace(
        empty,
        inliers=mask,
        offset_s=fit.offset_s,
        skew=fit.skew,
        reference_time_s=fit.reference_time_s,
        adjusted_r2=fit.adjusted_r2,
        residual_sd_s=fit.residual_sd,
    )
    if fit.residual_sd > cfg.max_residual_sd_s:
        return replace(out, reason=f"residual spread {fit.residual_sd:.3f} s")
    if not abs(fit.skew) < MAX_ABS_SKEW:
        return replace(out, reason=f"implausible skew {fit.skew:g}")
    return replace(out, valid=True)


def overlap_midpoint(a1: SensorTrace, a2: SensorTrace, lag_s: float) -> float:
    """Midpoint, in device-1 time, of the stretch both traces cover under ``lag_s``."""
    lo = max(a1.start_time_s, a2.start_time_s - lag_s)
    hi = min(a1.end_time_s, a2.end_time_s - lag_s)
    return 0.5 * (lo + hi)


def refine(a1: SensorTrace, a2: SensorTrace, prior: LagEstimate | float,
           cfg: Stage2Config = Stage2Config()) -> Refinement:
    """Fit a linear clock model to windowed accelerometer lags.

    ``a1`` and ``a2`` are magnitude (or other scalar) traces at one rate.
    When no window count yields a usable fit the prior is returned as a
    zero-skew model with a warning.
    """
    prior_lag = prior.lag_s if isinstance(prior, LagEstimate) else float(prior)
    ref = overlap_midpoint(a1, a2, prior_lag)
    geo = _geometry(a1, a2, prior_lag, cfg.refinement_range_s)
    fits, warnings = [], []
    for n_win in cfg.schedule():
        if geo.n_samples / geo.rate / n_win < cfg.min_window_s:
            break
        points, w = window_lags(a1, a2, prior_lag, cfg, n_win)
        warnings.extend(w)
        fits.append(_fit_windows(points, n_win, cfg, ref))

    valid = [f for f in fits if f.valid]
    if not valid:
        warnings.append("refinement inconclusive; keeping the pressure lag")
        return Refinement(ClockModel(float(prior_lag), 0.0, float(ref)), None, tuple(fits), tuple(_dedupe(warnings)))
    # max adjusted r2; ties go to fewer windows
    chosen = max(valid, key=lambda f: (f.adjusted_r2, -f.n_win))
    offset = chosen.offset_s
    lo, hi = prior_lag - cfg.refinement_range_s, prior_lag + cfg.refinement_range_s
    if not lo <= offset <= hi:
        warnings.append("refined lag clamped to the refinement range")
        offset = min(max(offset, lo), hi)
    model = ClockModel(float(offset), float(chosen.skew), float(ref))
    return Refinement(model, chosen, tuple(fits), tuple(_dedupe(warnings)))


def _dedupe(items):
    seen = set()
    out = []
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out
