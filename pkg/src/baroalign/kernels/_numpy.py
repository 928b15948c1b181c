"""
Vectorized numpy kernels: FFT lagged products and prefix-sum statistics.

Used when numba is unavailable or disabled via ``BAROALIGN_DISABLE_NUMBA``.
"""

import numpy as np
from scipy import fft as sfft


def _bounds(nf, ng, m_lo, m_hi):
    m = np.arange(m_lo, m_hi + 1)
    n0 = np.maximum(0, -m)
    n1 = np.minimum(nf, ng - m)
    return m, n0, n1


def lagged_sum_product(f, g, m_lo, m_hi):
    """``sum_n f[n] * g[n + m]`` for every ``m`` in ``[m_lo, m_hi]``."""
    nf, ng = f.shape[0], g.shape[0]
    # only the slice of g reachable from the lag range takes part
    g_lo = max(0, m_lo)
    g_hi = min(ng, nf + m_hi)
    gs = g[g_lo:g_hi]
    size = sfft.next_fast_len(nf + gs.shape[0] - 1, real=True)
    cross = sfft.rfft(gs, size) * np.conj(sfft.rfft(f, size))
    circ = sfft.irfft(cross, size)
    # circ[k] = sum_n f[n] gs[n + k] with negative k wrapped around
    k = np.arange(m_lo, m_hi + 1) - g_lo
    return circ[k % size]


def _prefix(x):
    out = np.empty(x.shape[0] + 1)
    out[0] = 0.0
    np.cumsum(x, out=out[1:])
    return out


def lagged_mean_product(f, g, m_lo, m_hi):
    m, n0, n1 = _bounds(f.shape[0], g.shape[0], m_lo, m_hi)
    return lagged_sum_product(f, g, m_lo, m_hi) / (n1 - n0)


def lagged_diff_std(f, g, m_lo, m_hi):
    # centring leaves the score unchanged and limits cancellation
    f = f - f.mean()
    g = g - g.mean()
    m, n0, n1 = _bounds(f.shape[0], g.shape[0], m_lo, m_hi)
    length = (n1 - n0).astype(np.float64)
    cf, cg = _prefix(f), _prefix(g)
    cff, cgg = _prefix(f * f), _prefix(g * g)
    sf = cf[n1] - cf[n0]
    sg = cg[n1 + m] - cg[n0 + m]
    sff = cff[n1] - cff[n0]
    sgg = cgg[n1 + m] - cgg[n0 + m]
    sfg = lagged_sum_product(f, g, m_lo, m_hi)
    sd = sf - sg
    ss = sff + sgg - 2.0 * sfg - sd * sd / length
    # where the difference is nearly constant the sums above cancel badly;
    # redo those lags in two passes
    for k in np.flatnonzero(ss <= 1e-4 * (sff + sgg)):
        d = f[n0[k]:n1[k]] - g[n0[k] + m[k]:n1[k] + m[k]]
        dev = d - d.mean()
        ss[k] = np.dot(dev, dev)
    return np.sqrt(np.maximum(ss, 0.0) / (length - 1.0))


def _per_lag(f, g, m_lo, m_hi, reduce):
    nf, ng = f.shape[0], g.shape[0]
    out = np.empty(m_hi - m_lo + 1)
    for k, m in enumerate(range(m_lo, m_hi + 1)):
        n0 = max(0, -m)
        n1 = min(nf, ng - m)
        out[k] = reduce(f[n0:n1] - g[n0 + m:n1 + m])
    return out


def lagged_mean_huber(f, g, m_lo, m_hi, delta):
    def reduce(d):
        a = np.abs(d)
        return np.where(a <= delta, 0.5 * d * d, delta * (a - 0.5 * delta)).mean()

    return _per_lag(f, g, m_lo, m_hi, reduce)


def lagged_mean_abs(f, g, m_lo, m_hi):
    return _per_lag(f, g, m_lo, m_hi, lambda d: np.abs(d).mean())


def mean_abs_at(f, g, lags):
    nf, ng = f.shape[0], g.shape[0]
    out = np.empty(lags.shape[0])
    for k, m in enumerate(lags.tolist()):
        n0 = max(0, -m)
        n1 = min(nf, ng - m)
        out[k] = np.abs(f[n0:n1] - g[n0 + m:n1 + m]).mean()
    return out
