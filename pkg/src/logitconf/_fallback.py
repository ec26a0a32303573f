"""Pure numpy kernels. Same signatures and draw layout as ``_kernels.pyx``.

All kernels take flat ``(P, C)`` float64 arrays of means and stds. Sampling
kernels address draws per pixel through ``stream_ids``; draw ``k`` of pixel
``p`` is normal number ``counter0 + k`` of stream ``(seed, stream_ids[p])``.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import ndtr as _ndtr

from . import _rng

NAME = "python"

UNDERFLOW = 1e-300
_INV_SQRT_2PI = 0.3989422804014327
_HALF_WIDTH = 12.0
# elements per chunk for the sampling kernels
_CHUNK_ELEMS = 1 << 21


def ndtr(x):
    return _ndtr(np.asarray(x, dtype=np.float64))


def pairwise(mu_w, sigma_w, mu_j, sigma_j):
    return float(_ndtr((mu_w - mu_j) / np.sqrt(sigma_w * sigma_w + sigma_j * sigma_j)))


def _chunked(n_pixels, per_pixel, fn, threads):
    size = max(1, _CHUNK_ELEMS // max(1, per_pixel))
    spans = [(lo, min(lo + size, n_pixels)) for lo in range(0, n_pixels, size)]
    if threads <= 1 or len(spans) <= 1:
        for lo, hi in spans:
            fn(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda s: fn(*s), spans))


def lower_bound(means, stds, winners, threads=1):
    p = np.arange(means.shape[0])
    mw = means[p, winners][:, None]
    sw = stds[p, winners][:, None]
    factors = _ndtr((mw - means) / np.sqrt(sw * sw + stds * stds))
    factors[p, winners] = 1.0
    out = np.ones(means.shape[0])
    for j in range(means.shape[1]):
        out *= factors[:, j]
    out[out < UNDERFLOW] = 0.0
    return out


# 8-point Gauss-Legendre rule on [-1, 1]
GL_NODES = np.array((-0.9602898564975362, -0.7966664774136267, -0.525532409916329, -0.18343464249564978,
                     0.18343464249564978, 0.525532409916329, 0.7966664774136267, 0.9602898564975362))
GL_WEIGHTS = np.array((0.10122853629037669, 0.22238103445337434, 0.31370664587788705, 0.36268378337836177,
                       0.36268378337836177, 0.31370664587788705, 0.22238103445337434, 0.10122853629037669))


def breakpoints(mu, sd, w):
    """Panel edges in standardized winner units.

    A challenger narrower than the winner switches its CDF factor on over a
    window of +-12 of its own stds; both window ends become edges.
    """
    mw, sw = mu[w], sd[w]
    edges = [-_HALF_WIDTH, _HALF_WIDTH]
    for j in range(mu.shape[0]):
        r = sd[j] / sw
        if j == w or r >= 1.0:
            continue
        zc = (mu[j] - mw) / sw
        for e in (zc - _HALF_WIDTH * r, zc + _HALF_WIDTH * r):
            if -_HALF_WIDTH < e < _HALF_WIDTH:
                edges.append(e)
    return np.unique(np.array(edges))


def _quad_one(mu, sd, w, n0, tol, max_nodes):
    mw, sw = mu[w], sd[w]
    keep = np.arange(mu.shape[0]) != w
    mo, so = mu[keep], sd[keep]

    def f(z):
        x = mw + sw * z
        vals = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
        for m, s in zip(mo, so):
            vals = vals * _ndtr((x - m) / s)
        return vals

    edges = breakpoints(mu, sd, w)
    lo, width = edges[:-1], np.diff(edges)
    panels0 = -(-n0 // 8)
    panels = np.maximum(1, np.ceil(panels0 * width / (2 * _HALF_WIDTH))).astype(np.int64)

    def rule(panels):
        h = np.repeat(width / panels, panels)
        left = np.concatenate([a + (L / m) * np.arange(m) for a, L, m in zip(lo, width, panels)])
        z = (left + 0.5 * h)[:, None] + (0.5 * h)[:, None] * GL_NODES
        return float((0.5 * h * (f(z.ravel()).reshape(z.shape) @ GL_WEIGHTS)).sum())

    est = rule(panels)
    while 16 * panels.sum() <= max_nodes:
        panels = 2 * panels
        new = rule(panels)
        if abs(new - est) < tol:
            return new, True
        est = new
    return est, False


def quadrature(means, stds, winners, n0, tol, max_nodes, threads=1):
    n_pix = means.shape[0]
    out = np.empty(n_pix)
    ok = np.empty(n_pix, dtype=bool)
    for p in range(n_pix):
        out[p], ok[p] = _quad_one(means[p], stds[p], int(winners[p]), n0, tol, max_nodes)
    return out, ok


def _keys(seed, stream_ids):
    return _rng.stream_key(np.uint64(seed), np.asarray(stream_ids, dtype=np.uint64))


def mc(means, stds, winners, n, seed, stream_ids, counter0=0, pool=None, threads=1):
    n_pix, n_cls = means.shape
    out = np.empty(n_pix)
    keys = _keys(seed, stream_ids)
    counters = np.uint64(counter0) + np.arange(n, dtype=np.uint64)

    def run(lo, hi):
        sl = slice(lo, hi)
        idx = np.arange(lo, hi)
        w = winners[sl]
        z = pool[None, :] if pool is not None else _rng.normals(keys[sl, None], counters[None, :])
        x = means[idx, w][:, None] + stds[idx, w][:, None] * z
        prod = np.ones((hi - lo, n))
        for j in range(n_cls):
            f = _ndtr((x - means[sl, j, None]) / stds[sl, j, None])
            f[w == j] = 1.0
            prod *= f
        out[sl] = prod.sum(axis=1) / n

    _chunked(n_pix, n * n_cls, run, threads)
    return out


def _class_draws(keys, counter0, n, n_cls):
    counters = np.uint64(counter0) + np.arange(n * n_cls, dtype=np.uint64)
    return _rng.normals(keys[:, None], counters[None, :]).reshape(keys.shape[0], n, n_cls)


def joint(means, stds, winners, n, seed, stream_ids, counter0=0, threads=1):
    n_pix, n_cls = means.shape
    out = np.empty(n_pix)
    keys = _keys(seed, stream_ids)

    def run(lo, hi):
        sl = slice(lo, hi)
        x = means[sl, None, :] + stds[sl, None, :] * _class_draws(keys[sl], counter0, n, n_cls)
        xw = np.take_along_axis(x, winners[sl, None, None], axis=2)
        wins = np.all(xw >= x, axis=2)
        out[sl] = wins.sum(axis=1) / n

    _chunked(n_pix, n * n_cls, run, threads)
    return out


def softmax_avg(means, stds, n, seed, stream_ids, counter0=0, threads=1):
    n_pix, n_cls = means.shape
    out = np.empty((n_pix, n_cls))
    keys = _keys(seed, stream_ids)

    def run(lo, hi):
        sl = slice(lo, hi)
        x = means[sl, None, :] + stds[sl, None, :] * _class_draws(keys[sl], counter0, n, n_cls)
        x -= x.max(axis=2, keepdims=True)
        e = np.exp(x)
        e /= e.sum(axis=2, keepdims=True)
        out[sl] = e.sum(axis=1) / n

    _chunked(n_pix, n * n_cls, run, threads)
    return out
