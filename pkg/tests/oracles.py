"""Independent reference implementations used only by the tests."""
import math

import numpy as np


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b, atol=1e-8):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), atol))


def naive_ece(conf, correct, n_bins):
    """Bin by explicit interval tests, accumulating in record order."""
    n = len(conf)
    ece = 0.0
    for m in range(1, n_bins + 1):
        lo, hi = (m - 1) / n_bins, m / n_bins
        count, s_conf, s_corr = 0, 0.0, 0.0
        for r, c in zip(conf, correct):
            inside = (r >= lo if m == 1 else r > lo) and r <= hi
            if inside:
                count += 1
                s_conf += r
                s_corr += c
        if count:
            ece += count / n * abs(s_corr / count - s_conf / count)
    return ece


def naive_wmmce_hard(r, c, bandwidth):
    """Three index-restricted double sums for 0/1 correctness."""
    n = len(r)
    n_c = sum(c)
    k = lambda a, b: math.exp(-abs(a - b) / bandwidth)
    s = 0.0
    for i in range(n):
        for j in range(n):
            if c[i] == 0 and c[j] == 0:
                s += r[i] * r[j] * k(r[i], r[j]) / ((n - n_c) * (n - n_c))
            if c[i] == 1 and c[j] == 1:
                s += (1 - r[i]) * (1 - r[j]) * k(r[i], r[j]) / n_c ** 2
            if c[i] == 1 and c[j] == 0:
                s -= 2 * (1 - r[i]) * r[j] * k(r[i], r[j]) / ((n - n_c) * n_c)
    return math.sqrt(max(s, 0.0))


def naive_wmmce_soft(r, c, bandwidth):
    """Pair-weighted double sums for soft correctness in [0, 1]."""
    n = len(r)
    n_c = sum(c)
    n_w = n - n_c
    k = lambda a, b: math.exp(-abs(a - b) / bandwidth)
    s = 0.0
    for i in range(n):
        for j in range(n):
            kij = k(r[i], r[j])
            if n_w > 0:
                s += (1 - c[i]) * (1 - c[j]) * r[i] * r[j] * kij / n_w ** 2
            if n_c > 0:
                s += c[i] * c[j] * (1 - r[i]) * (1 - r[j]) * kij / n_c ** 2
            if n_w > 0 and n_c > 0:
                s -= 2 * c[i] * (1 - c[j]) * (1 - r[i]) * r[j] * kij / (n_w * n_c)
    return math.sqrt(max(s, 0.0))


def softmax_np(z):
    z = np.asarray(z, float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def mlp_forward_np(spec, theta, x):
    """Plain numpy forward pass, independent of the tape."""
    dims = [spec.input_dim, *spec.hidden_dims, spec.class_count]
    h = np.asarray(x, float)
    off = 0
    for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        w = theta[off:off + a * b].reshape(a, b)
        off += a * b
        bias = theta[off:off + b]
        off += b
        h = h @ w + bias
        if k < len(dims) - 2:
            h = np.maximum(h, 0) if spec.activation == "relu" else np.tanh(h)
    return softmax_np(h)


def norm_rel_err(a, b):
    """max |a - b| / max |b|: finite differences cannot resolve components
    much below eps * |f| / h, so elementwise ratios on those are noise."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)
