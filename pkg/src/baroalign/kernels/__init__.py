"""
Lag-scan kernels: overlap-normalized cross-correlation and cross-covariance,
mean Huber loss and standard deviation of the pointwise difference.

Every scan pairs ``f[n]`` with ``g[n + m]`` and normalizes by the overlap
length ``l[m]``. Lags are only scored where ``l[m] >= min_overlap``; the
default is the length of the shorter input, so the shorter trace must lie
fully inside the longer one.

Two interchangeable backends compute the scans: direct per-lag loops
compiled with numba, and a numpy path built on FFT products and prefix sums.
Setting ``BAROALIGN_DISABLE_NUMBA=1`` (or lacking numba) selects numpy.
Product and standard-deviation scans over more than ``DIRECT_MAX_LAGS`` lags
always take the FFT route, since a direct loop costs one pass over the
overlap per lag.
"""

from __future__ import annotations

import contextlib
import math
import os
from dataclasses import dataclass

import numpy as np

from ..model import LagEstimate, Method
from . import _numpy

try:
    if os.environ.get("BAROALIGN_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes"):
        raise ImportError("numba disabled by BAROALIGN_DISABLE_NUMBA")
    from . import _numba
except ImportError:
    _numba = None

__all__ = [
    "LagScan",
    "overlap_length",
    "admissible_lags",
    "cross_correlation_scan",
    "cross_covariance_scan",
    "huber",
    "delta_error_scan",
    "delta_std_scan",
    "mean_abs_scan",
    "mean_abs_minimum",
    "best_lag",
    "backend",
    "use_backend",
]

_BACKENDS = {"numpy": _numpy}
if _numba is not None:
    _BACKENDS["numba"] = _numba
_active = "numba" if _numba is not None else "numpy"

DIRECT_MAX_LAGS = 64


def backend() -> str:
    """Name of the backend currently used by the scans."""
    return _active


@contextlib.contextmanager
def use_backend(name: str):
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(_BACKENDS)}")
    prev, _active = _active, name
    try:
        yield
    finally:
        _active = prev


def _impl():
    return _BACKENDS[_active]


@dataclass(frozen=True)
class LagScan:
    lags: np.ndarray
    scores: np.ndarray
    maximize: bool
    overlap_lengths: np.ndarray
    method: Method

    def __len__(self) -> int:
        return self.lags.shape[0]

    def score_at(self, m: int) -> float:
        return float(self.scores[m - self.lags[0]])


def overlap_length(n_f: int, n_g: int, m):
    """Number of sample pairs ``(f[n], g[n+m])``; may be <= 0 outside the valid range."""
    return np.minimum(n_f, n_g - m) - np.maximum(0, -m)


def admissible_lags(n_f: int, n_g: int, min_overlap: int, m_range=None) -> tuple[int, int]:
    """Contiguous lag range with ``l[m] >= min_overlap``, clipped to ``m_range``.

    Raises ValueError when nothing is admissible.
    """
    lo, hi = min_overlap - n_f, n_g - min_overlap
    if m_range is not None:
        lo, hi = max(lo, int(m_range[0])), min(hi, int(m_range[1]))
    if min_overlap > min(n_f, n_g) or lo > hi:
        raise ValueError(
            f"empty lag range: lengths ({n_f}, {n_g}), min_overlap {min_overlap}, range {m_range}"
        )
    return lo, hi


def _prepare(f, g, m_range, min_overlap, floor=1):
    f = np.ascontiguousarray(f, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    if f.ndim != 1 or g.ndim != 1:
        raise ValueError("scans take one-dimensional inputs")
    if min_overlap is None:
        min_overlap = min(f.shape[0], g.shape[0])
    lo, hi = admissible_lags(f.shape[0], g.shape[0], max(int(min_overlap), floor), m_range)
    return f, g, lo, hi


def _fft_impl(lo, hi):
    return _numpy if hi - lo + 1 > DIRECT_MAX_LAGS else _impl()


def _scan(scores, lo, hi, nf, ng, maximize, method):
    lags = np.arange(lo, hi + 1)
    return LagScan(lags, scores, maximize, overlap_length(nf, ng, lags), Method(method))


def cross_correlation_scan(f, g, m_range=None, min_overlap=None) -> LagScan:
    f, g, lo, hi = _prepare(f, g, m_range, min_overlap)
    scores = _fft_impl(lo, hi).lagged_mean_product(f, g, lo, hi)
    return _scan(scores, lo, hi, len(f), len(g), True, Method.XCORR)


def cross_covariance_scan(f, g, m_range=None, min_overlap=None) -> LagScan:
    """Cross-correlation after removing each input's global mean."""
    f, g, lo, hi = _prepare(f, g, m_range, min_overlap)
    scores = _fft_impl(lo, hi).lagged_mean_product(f - f.mean(), g - g.mean(), lo, hi)
    return _scan(scores, lo, hi, len(f), len(g), True, Method.XCOV)


def huber(x, delta: float):
    """Huber loss: quadratic within ``delta``, linear beyond, C1 at the joint."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    a = np.abs(x)
    out = np.where(a <= delta, 0.5 * np.square(x), delta * (a - 0.5 * delta))
    return float(out) if np.ndim(out) == 0 else out


def delta_error_scan(f, g, m_range=None, delta: float = 100.0, min_overlap=None) -> LagScan:
    if not delta > 0:
        raise ValueError("delta must be positive")
    f, g, lo, hi = _prepare(f, g, m_range, min_overlap)
    scores = _impl().lagged_mean_huber(f, g, lo, hi, float(delta))
    return _scan(scores, lo, hi, len(f), len(g), False, Method.DELTA_ERROR)


def delta_std_scan(f, g, m_range=None, min_overlap=None) -> LagScan:
    """Sample standard deviation of ``f[n] - g[n+m]`` over each overlap."""
    f, g, lo, hi = _prepare(f, g, m_range, min_overlap, floor=2)
    scores = _fft_impl(lo, hi).lagged_diff_std(f, g, lo, hi)
    return _scan(scores, lo, hi, len(f), len(g), False, Method.DELTA_STD)


def mean_abs_scan(f, g, m_range=None, min_overlap=None) -> LagScan:
    """Mean absolute pointwise difference; the simultaneity statistic."""
    f, g, lo, hi = _prepare(f, g, m_range, min_overlap)
    scores = _impl().lagged_mean_abs(f, g, lo, hi)
    return _scan(scores, lo, hi, len(f), len(g), False, Method.MEAN_ABS)


def mean_abs_minimum(f, g, sample_rate_hz: float, m_range=None, min_overlap=None) -> LagEstimate:
    """Same result as ``best_lag(mean_abs_scan(...))`` without scoring every lag.

    ``|mean(f - g)|`` over an overlap never exceeds ``mean|f - g|`` and costs
    O(1) per lag from prefix sums. Lags are scored in order of that bound
    until the bound exceeds the best score found.
    """
    f, g, lo, hi = _prepare(f, g, m_range, min_overlap)
    nf, ng = f.shape[0], g.shape[0]
    lags = np.arange(lo, hi + 1)
    n0 = np.maximum(0, -lags)
    n1 = np.minimum(nf, ng - lags)
    c = f.mean()
    cf = np.concatenate(([0.0], np.cumsum(f - c)))
    cg = np.concatenate(([0.0], np.cumsum(g - c)))
    bound = np.abs((cf[n1] - cf[n0]) - (cg[n1 + lags] - cg[n0 + lags])) / (n1 - n0)
    # slack for rounding in the prefix sums
    tol = 1e-9 * (np.abs(f - c).sum() + np.abs(g - c).sum()) / min(nf, ng) + 1e-12
    order = np.argsort(bound, kind="stable")
    impl = _impl()
    best = math.inf
    seen_lags, seen_scores = [], []
    start, chunk = 0, 16
    while start < order.shape[0] and bound[order[start]] - tol <= best:
        idx = order[start:start + chunk]
        idx = idx[bound[idx] - tol <= best]
        scores = impl.mean_abs_at(f, g, lags[idx])
        seen_lags.append(lags[idx])
        seen_scores.append(scores)
        best = min(best, float(scores.min()))
        start += chunk
        chunk = min(chunk * 2, 4096)
    cand_lags = np.concatenate(seen_lags)
    cand_scores = np.concatenate(seen_scores)
    cands = cand_lags[cand_scores == best]
    m = int(cands[np.lexsort((cands, np.abs(cands)))[0]])
    warnings = ()
    if lags.shape[0] > 1 and cands.size == lags.shape[0]:
        warnings = ("flat scan: all scores equal",)
    return LagEstimate(
        lag_s=m / sample_rate_hz,
        score=best,
        maximize=False,
        method=Method.MEAN_ABS,
        search_range_s=(lo / sample_rate_hz, hi / sample_rate_hz),
        warnings=warnings,
    )


def best_lag(scan: LagScan, sample_rate_hz: float) -> LagEstimate:
    """Extremal lag of ``scan`` in seconds (``m / rate``).

    Exact ties go to the smallest ``|m|``, then to the negative lag.
    """
    if len(scan) == 0:
        raise ValueError("empty scan")
    scores = scan.scores
    target = scores.max() if scan.maximize else scores.min()
    cands = scan.lags[scores == target]
    if cands.size == 0:
        raise ValueError("scan contains no finite extremum")
    m = int(cands[np.lexsort((cands, np.abs(cands)))[0]])
    warnings = ()
    if len(scan) > 1 and cands.size == len(scan):
        warnings = ("flat scan: all scores equal",)
    rng = (scan.lags[0] / sample_rate_hz, scan.lags[-1] / sample_rate_hz)
    return LagEstimate(
        lag_s=m / sample_rate_hz,
        score=float(target),
        maximize=scan.maximize,
        method=scan.method,
        search_range_s=rng,
        warnings=warnings,
    )


def lag_range_samples(range_s, sample_rate_hz: float) -> tuple[int, int]:
    """Integer lag bounds that stay inside a range given in seconds."""
    lo, hi = range_s
    return math.ceil(lo * sample_rate_hz - 1e-9), math.floor(hi * sample_rate_hz + 1e-9)
