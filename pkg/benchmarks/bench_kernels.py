"""Time the numba and numpy lag-scan backends against each other.

    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --sizes 1000:200,36000:600 --repeat 5

Each size is ``N:LAGS``: a trace of N samples scanned against one that is
longer by LAGS samples, over every one of the LAGS + 1 containment lags.
Backends are called directly, so the numba column always shows the direct
per-lag loop even where the public scans would switch to the FFT route.
"""

import argparse
import statistics
import time

import numpy as np

from baroalign.kernels import _numpy

try:
    from baroalign.kernels import _numba
except ImportError:  # numba missing or disabled
    _numba = None

KERNELS = {
    "mean_product": lambda b, f, g, lo, hi: b.lagged_mean_product(f, g, lo, hi),
    "mean_huber": lambda b, f, g, lo, hi: b.lagged_mean_huber(f, g, lo, hi, 1.0),
    "mean_abs": lambda b, f, g, lo, hi: b.lagged_mean_abs(f, g, lo, hi),
    "diff_std": lambda b, f, g, lo, hi: b.lagged_diff_std(f, g, lo, hi),
}


def parse_sizes(text):
    out = []
    for item in text.split(","):
        n, lags = item.split(":")
        out.append((int(n), int(lags)))
    return out


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--sizes", type=parse_sizes, default=parse_sizes("1000:64,10000:64,10000:1000,36000:600,36000:6000"))
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    backends = {"numpy": _numpy}
    if _numba is not None:
        backends["numba"] = _numba
        # compile outside the timed runs
        f, g = rng.normal(size=50), rng.normal(size=60)
        for fn in KERNELS.values():
            fn(_numba, f, g, 0, 10)
    else:
        print("numba unavailable; timing numpy only")

    header = f"{'kernel':<14}{'N':>8}{'lags':>7}" + "".join(f"{name + ' ms':>12}" for name in backends)
    if len(backends) == 2:
        header += f"{'numpy/numba':>13}"
    print(header)
    for n, lags in args.sizes:
        f = 101325 + np.cumsum(rng.normal(0, 3, n))
        g = 101325 + np.cumsum(rng.normal(0, 3, n + lags))
        for kname, fn in KERNELS.items():
            row = f"{kname:<14}{n:>8}{lags + 1:>7}"
            best = {}
            for bname, mod in backends.items():
                best[bname], _ = best_time(lambda: fn(mod, f, g, 0, lags), args.repeat)
                row += f"{best[bname] * 1e3:>12.2f}"
            if len(backends) == 2:
                row += f"{best['numpy'] / best['numba']:>13.2f}"
            print(row)


if __name__ == "__main__":
    main()
