"""
Direct per-lag kernels compiled with numba.

Every lag is reduced sequentially inside one thread, so results do not
depend on how ``prange`` distributes lags.
"""

import numpy as np
from numba import config, njit, prange

# the bundled TBB is often too old and only produces a warning
config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]


@njit(cache=True, nogil=True, parallel=True)
def lagged_mean_product(f, g, m_lo, m_hi):
    nf = f.shape[0]
    ng = g.shape[0]
    out = np.empty(m_hi - m_lo + 1)
    for k in prange(m_hi - m_lo + 1):
        m = m_lo + k
        n0 = max(0, -m)
        n1 = min(nf, ng - m)
        acc = 0.0
        for n in range(n0, n1):
            acc += f[n] * g[n + m]
        out[k] = acc / (n1 - n0)
    return out


@njit(cache=True, nogil=True, inline="always")
def _huber(x, delta):
    a = abs(x)
    if a <= delta:
        return 0.5 * x * x
    return delta * (a - 0.5 * delta)


@njit(cache=True, nogil=True, parallel=True)
def lagged_mean_huber(f, g, m_lo, m_hi, delta):
    nf = f.shape[0]
    ng = g.shape[0]
    out = np.empty(m_hi - m_lo + 1)
    for k in prange(m_hi - m_lo + 1):
        m = m_lo + k
        n0 = max(0, -m)
        n1 = min(nf, ng - m)
        acc = 0.0
        for n in range(n0, n1):
            acc += _huber(f[n] - g[n + m], delta)
        out[k] = acc / (n1 - n0)
    return out


@njit(cache=True, nogil=True, parallel=True)
def lagged_mean_abs(f, g, m_lo, m_hi):
    nf = f.shape[0]
    ng = g.shape[0]
    out = np.empty(m_hi - m_lo + 1)
    for k in prange(m_hi - m_lo + 1):
        m = m_lo + k
        n0 = max(0, -m)
        n1 = min(nf, ng - m)
        acc = 0.0
        for n in range(n0, n1):
            acc += abs(f[n] - g[n + m])
        out[k] = acc / (n1 - n0)
    return out


@njit(cache=True, nogil=True, parallel=True)
def lagged_diff_std(f, g, m_lo, m_hi):
    nf = f.shape[0]
    ng = g.shape[0]
    out = np.empty(m_hi - m_lo + 1)
    for k in prange(m_hi - m_lo + 1):
        m = m_lo + k
        n0 = max(0, -m)
        n1 = min(nf, ng - m)
        length = n1 - n0
        mu = 0.0
        for n in range(n0, n1):
            mu += f[n] - g[n + m]
        mu /= length
        acc = 0.0
        for n in range(n0, n1):
            d = f[n] - g[n + m] - mu
            acc += d * d
        out[k] = np.sqrt(acc / (length - 1))
    return out


@njit(cache=True, nogil=True, parallel=True)
def mean_abs_at(f, g, lags):
    nf = f.shape[0]
    ng = g.shape[0]
    out = np.empty(lags.shape[0])
    for k in prange(lags.shape[0]):
        m = lags[k]
        n0 = max(0, -m)
        n1 = min(nf, ng - m)
        acc = 0.0
        for n in range(n0, n1):
            acc += abs(f[n] - g[n + m])
        out[k] = acc / (n1 - n0)
    return out
