"""Hot inner loops: the pairwise Laplacian quadratic form and ECE binning.

Each kernel has a numba ``@njit`` version and a pure-numpy version.  The numba
path is used when numba imports and ``CALIBRA_DISABLE_NUMBA`` is unset or "0".
Both paths are always importable as ``numba_*`` / ``numpy_*`` for benchmarking
and cross-checking.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("CALIBRA_DISABLE_NUMBA", "0") in ("", "0")


# -- numpy ------------------------------------------------------------------

def numpy_laplacian_quadform(r, w, bandwidth):
    diff = r[:, None] - r[None, :]
    k = np.exp(-np.abs(diff) / bandwidth)
    kw = k @ w
    s = float(w @ kw)
    dr = (-2.0 / bandwidth) * w * ((k * np.sign(diff)) @ w)
    return s, kw, dr


def numpy_bin_stats(conf, correct, n_bins):
    edges = np.arange(n_bins + 1) / n_bins
    idx = np.searchsorted(edges, conf, side="left") - 1
    idx = np.clip(idx, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    sum_conf = np.bincount(idx, weights=conf, minlength=n_bins)
    sum_correct = np.bincount(idx, weights=correct, minlength=n_bins)
    return counts, sum_conf, sum_correct


# -- numba ------------------------------------------------------------------

def _numba_laplacian_quadform(r, w, bandwidth):
    n = r.shape[0]
    kw = np.zeros(n)
    skw = np.zeros(n)
    for i in range(n):
        acc = 0.0
        sacc = 0.0
        ri = r[i]
        for j in range(n):
            d = ri - r[j]
            k = np.exp(-abs(d) / bandwidth)
            acc += k * w[j]
            if d > 0.0:
                sacc += k * w[j]
            elif d < 0.0:
                sacc -= k * w[j]
        kw[i] = acc
        skw[i] = sacc
    s = 0.0
    for i in range(n):
        s += w[i] * kw[i]
    dr = (-2.0 / bandwidth) * w * skw
    return s, kw, dr


def _numba_bin_stats(conf, correct, n_bins):
    counts = np.zeros(n_bins, dtype=np.int64)
    sum_conf = np.zeros(n_bins)
    sum_correct = np.zeros(n_bins)
    for i in range(conf.shape[0]):
        r = conf[i]
        m = int(np.ceil(r * n_bins)) - 1
        if m < 0:
            m = 0
        if m > n_bins - 1:
            m = n_bins - 1
        # ceil(r * M) can land one bin off the exact edge m / M
        while m > 0 and r <= m / n_bins:
            m -= 1
        while m < n_bins - 1 and r > (m + 1) / n_bins:
            m += 1
        counts[m] += 1
        sum_conf[m] += r
        sum_correct[m] += correct[i]
    return counts, sum_conf, sum_correct


if HAVE_NUMBA:
    numba_laplacian_quadform = njit(cache=True)(_numba_laplacian_quadform)
    numba_bin_stats = njit(cache=True)(_numba_bin_stats)
else:  # pragma: no cover
    numba_laplacian_quadform = _numba_laplacian_quadform
    numba_bin_stats = _numba_bin_stats


if USE_NUMBA:
    def laplacian_quadform(r, w, bandwidth):
        s, kw, dr = numba_laplacian_quadform(
            np.ascontiguousarray(r, dtype=np.float64),
            np.ascontiguousarray(w, dtype=np.float64),
            float(bandwidth),
        )
        return s, kw, dr

    def bin_stats(conf, correct, n_bins):
        return numba_bin_stats(
            np.ascontiguousarray(conf, dtype=np.float64),
            np.ascontiguousarray(correct, dtype=np.float64),
            int(n_bins),
        )
else:
    laplacian_quadform = numpy_laplacian_quadform
    bin_stats = numpy_bin_stats
