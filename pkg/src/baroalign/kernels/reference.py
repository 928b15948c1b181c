"""
Reference scans evaluated lag by lag straight from the defining sums.

Slow, but independent of both accelerated backends; the test-suite checks
each backend against these.
"""

import numpy as np


def _pairs(f, g, m):
    n0 = max(0, -m)
    n1 = min(len(f), len(g) - m)
    return np.asarray(f[n0:n1], dtype=np.float64), np.asarray(g[n0 + m:n1 + m], dtype=np.float64)


def xcorr(f, g, lags):
    out = []
    for m in lags:
        a, b = _pairs(f, g, m)
        out.append(np.dot(a, b) / len(a))
    return np.array(out)


def xcov(f, g, lags):
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    return xcorr(f - f.mean(), g - g.mean(), lags)


def huber(x, delta):
    return x * x / 2 if abs(x) <= delta else delta * (abs(x) - delta / 2)


def delta_error(f, g, lags, delta):
    out = []
    for m in lags:
        a, b = _pairs(f, g, m)
        d = a - b
        ad = np.abs(d)
        out.append(np.sum(np.where(ad <= delta, d * d / 2, delta * (ad - delta / 2))) / len(d))
    return np.array(out)


def delta_std(f, g, lags):
    out = []
    for m in lags:
        a, b = _pairs(f, g, m)
        d = a - b
        mu = np.sum(d) / len(d)
        out.append(np.sqrt(np.sum((d - mu) ** 2) / (len(d) - 1)))
    return np.array(out)


def mean_abs(f, g, lags):
    out = []
    for m in lags:
        a, b = _pairs(f, g, m)
        out.append(np.sum(np.abs(a - b)) / len(a))
    return np.array(out)
