# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Mirrors ``_fallback`` exactly in signature and draw layout."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, exp, log, cos, sin, fabs, ceil
from libc.stdlib cimport malloc, free, qsort
from libc.stdint cimport uint64_t
from scipy.special.cython_special cimport ndtr as _sp_ndtr

cnp.import_array()

NAME = "cython"

cdef double UNDERFLOW = 1e-300
cdef double INV_SQRT_2PI = 0.3989422804014327
cdef double HALF_WIDTH = 12.0
cdef double TWO_PI = 6.283185307179586
cdef double TWO_M53 = 1.1102230246251565e-16
cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL


cdef inline double _phi(double x) noexcept nogil:
    return _sp_ndtr(x)


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t _key(uint64_t seed, uint64_t stream_id) noexcept nogil:
    return _mix(seed ^ _mix(stream_id + GAMMA))


cdef inline double _uniform(uint64_t key, uint64_t counter) noexcept nogil:
    cdef uint64_t w = _mix(key + (counter + 1) * GAMMA)
    return (<double>(w >> 11) + 0.5) * TWO_M53


cdef inline double _normal(uint64_t key, uint64_t k) noexcept nogil:
    cdef uint64_t even = k & ~(<uint64_t>1)
    cdef double r = sqrt(-2.0 * log(_uniform(key, even)))
    cdef double theta = TWO_PI * _uniform(key, even + 1)
    if k & 1:
        return r * sin(theta)
    return r * cos(theta)


cdef inline void _normal_run(uint64_t key, uint64_t start, Py_ssize_t count,
                             double* dst) noexcept nogil:
    # draws start..start+count-1, one log/sqrt per Box-Muller pair
    cdef Py_ssize_t i = 0
    cdef uint64_t k = start
    cdef double r, theta
    if count > 0 and (k & 1):
        dst[0] = _normal(key, k)
        i = 1
        k = k + 1
    while i + 1 < count:
        r = sqrt(-2.0 * log(_uniform(key, k)))
        theta = TWO_PI * _uniform(key, k + 1)
        dst[i] = r * cos(theta)
        dst[i + 1] = r * sin(theta)
        i = i + 2
        k = k + 2
    if i < count:
        dst[i] = _normal(key, k)


cdef inline double _pair(double mw, double sw, double mj, double sj) noexcept nogil:
    return _phi((mw - mj) / sqrt(sw * sw + sj * sj))


def ndtr(x):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i
    for i in range(flat.shape[0]):
        out[i] = _phi(flat[i])
    return out.reshape(np.shape(x))


def pairwise(double mu_w, double sigma_w, double mu_j, double sigma_j):
    return _pair(mu_w, sigma_w, mu_j, sigma_j)


def lower_bound(const double[:, ::1] means, const double[:, ::1] stds,
                const cnp.int64_t[::1] winners, int threads=1):
    cdef Py_ssize_t n_pix = means.shape[0], n_cls = means.shape[1]
    out_arr = np.empty(n_pix)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p, j, w
    cdef double prod
    for p in prange(n_pix, nogil=True, num_threads=threads, schedule="static"):
        w = winners[p]
        prod = 1.0
        for j in range(n_cls):
            if j != w:
                prod = prod * _pair(means[p, w], stds[p, w], means[p, j], stds[p, j])
        if prod < UNDERFLOW:
            prod = 0.0
        out[p] = prod
    return out_arr


cdef inline double _integrand(const double[:, ::1] means, const double[:, ::1] stds,
                              Py_ssize_t p, Py_ssize_t w, double z) noexcept nogil:
    cdef double x = means[p, w] + stds[p, w] * z
    cdef double v = INV_SQRT_2PI * exp(-0.5 * z * z)
    cdef Py_ssize_t j
    for j in range(means.shape[1]):
        if j != w:
            v = v * _phi((x - means[p, j]) / stds[p, j])
    return v


cdef double GL_NODES[8]
cdef double GL_WEIGHTS[8]
GL_NODES[:] = [-0.9602898564975362, -0.7966664774136267, -0.525532409916329, -0.18343464249564978,
               0.18343464249564978, 0.525532409916329, 0.7966664774136267, 0.9602898564975362]
GL_WEIGHTS[:] = [0.10122853629037669, 0.22238103445337434, 0.31370664587788705, 0.36268378337836177,
                 0.36268378337836177, 0.31370664587788705, 0.22238103445337434, 0.10122853629037669]


cdef int _cmp_double(const void* a, const void* b) noexcept nogil:
    cdef double x = (<const double*>a)[0], y = (<const double*>b)[0]
    return (x > y) - (x < y)


cdef Py_ssize_t _breakpoints(const double[:, ::1] means, const double[:, ::1] stds,
                             Py_ssize_t p, Py_ssize_t w, double* edges) noexcept nogil:
    # same edge set as the fallback: +-12 challenger stds around each narrow transition
    cdef double sw = stds[p, w], r, zc, e
    cdef Py_ssize_t j, k, n = 2, m
    edges[0] = -HALF_WIDTH
    edges[1] = HALF_WIDTH
    for j in range(means.shape[1]):
        r = stds[p, j] / sw
        if j == w or r >= 1.0:
            continue
        zc = (means[p, j] - means[p, w]) / sw
        for k in range(2):
            e = zc - HALF_WIDTH * r if k == 0 else zc + HALF_WIDTH * r
            if -HALF_WIDTH < e < HALF_WIDTH:
                edges[n] = e
                n = n + 1
    qsort(edges, n, sizeof(double), _cmp_double)
    m = 1
    for j in range(1, n):
        if edges[j] != edges[m - 1]:
            edges[m] = edges[j]
            m = m + 1
    return m


cdef double _gl_rule(const double[:, ::1] means, const double[:, ::1] stds, Py_ssize_t p,
                     Py_ssize_t w, const double* edges, const Py_ssize_t* panels,
                     Py_ssize_t n_int) noexcept nogil:
    cdef double total = 0.0, h, mid, acc
    cdef Py_ssize_t s, i, k
    for s in range(n_int):
        h = (edges[s + 1] - edges[s]) / panels[s]
        for i in range(panels[s]):
            mid = edges[s] + h * i + 0.5 * h
            acc = 0.0
            for k in range(8):
                acc = acc + GL_WEIGHTS[k] * _integrand(means, stds, p, w, mid + 0.5 * h * GL_NODES[k])
            total = total + 0.5 * h * acc
    return total


cdef int _quad_one(const double[:, ::1] means, const double[:, ::1] stds,
                   Py_ssize_t p, Py_ssize_t w, Py_ssize_t n0, double tol,
                   Py_ssize_t max_nodes, double* result) noexcept nogil:
    cdef Py_ssize_t c = means.shape[1], n_edges, n_int, s, total
    cdef Py_ssize_t panels0 = (n0 + 7) // 8
    cdef double* edges = <double*>malloc((2 * c + 2) * sizeof(double))
    cdef Py_ssize_t* panels = <Py_ssize_t*>malloc((2 * c + 2) * sizeof(Py_ssize_t))
    cdef double est, new, width
    cdef int ok = 0
    n_edges = _breakpoints(means, stds, p, w, edges)
    n_int = n_edges - 1
    total = 0
    for s in range(n_int):
        width = edges[s + 1] - edges[s]
        panels[s] = <Py_ssize_t>ceil(panels0 * width / (2.0 * HALF_WIDTH))
        if panels[s] < 1:
            panels[s] = 1
        total = total + panels[s]
    est = _gl_rule(means, stds, p, w, edges, panels, n_int)
    while 16 * total <= max_nodes:
        for s in range(n_int):
            panels[s] = 2 * panels[s]
        total = 2 * total
        new = _gl_rule(means, stds, p, w, edges, panels, n_int)
        if fabs(new - est) < tol:
            est = new
            ok = 1
            break
        est = new
    free(edges)
    free(panels)
    result[0] = est
    return ok


def quadrature(const double[:, ::1] means, const double[:, ::1] stds,
               const cnp.int64_t[::1] winners, Py_ssize_t n0, double tol,
               Py_ssize_t max_nodes, int threads=1):
    cdef Py_ssize_t n_pix = means.shape[0]
    out_arr = np.empty(n_pix)
    ok_arr = np.empty(n_pix, dtype=np.uint8)
    cdef double[::1] out = out_arr
    cdef unsigned char[::1] ok = ok_arr
    cdef Py_ssize_t p
    cdef double val
    for p in prange(n_pix, nogil=True, num_threads=threads, schedule="dynamic"):
        ok[p] = _quad_one(means, stds, p, winners[p], n0, tol, max_nodes, &val)
        out[p] = val
    return out_arr, ok_arr.astype(bool)


def mc(const double[:, ::1] means, const double[:, ::1] stds,
       const cnp.int64_t[::1] winners, Py_ssize_t n, uint64_t seed,
       const uint64_t[::1] stream_ids, uint64_t counter0=0, pool=None, int threads=1):
    cdef Py_ssize_t n_pix = means.shape[0], n_cls = means.shape[1]
    out_arr = np.empty(n_pix)
    cdef double[::1] out = out_arr
    cdef double[::1] zpool
    cdef bint shared = pool is not None
    if shared:
        zpool = np.ascontiguousarray(pool, dtype=np.float64)
    else:
        zpool = np.empty(1)
    cdef Py_ssize_t p, k, j, w
    cdef uint64_t key, kk
    cdef double total, prod, x, z, r, theta, zsin
    for p in prange(n_pix, nogil=True, num_threads=threads, schedule="static"):
        w = winners[p]
        key = _key(seed, stream_ids[p])
        total = 0.0
        zsin = 0.0
        for k in range(n):
            kk = counter0 + k
            if shared:
                z = zpool[k]
            elif (kk & 1) and k > 0:
                z = zsin
            elif kk & 1:
                z = _normal(key, kk)
            else:
                r = sqrt(-2.0 * log(_uniform(key, kk)))
                theta = TWO_PI * _uniform(key, kk + 1)
                z = r * cos(theta)
                zsin = r * sin(theta)
            x = means[p, w] + stds[p, w] * z
            prod = 1.0
            for j in range(n_cls):
                if j != w:
                    prod = prod * _phi((x - means[p, j]) / stds[p, j])
            total = total + prod
        out[p] = total / n
    return out_arr


def joint(const double[:, ::1] means, const double[:, ::1] stds,
          const cnp.int64_t[::1] winners, Py_ssize_t n, uint64_t seed,
          const uint64_t[::1] stream_ids, uint64_t counter0=0, int threads=1):
    cdef Py_ssize_t n_pix = means.shape[0], n_cls = means.shape[1]
    out_arr = np.empty(n_pix)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p, t, j, w, hits
    cdef uint64_t key, base
    cdef double xw, xj
    cdef bint win
    for p in prange(n_pix, nogil=True, num_threads=threads, schedule="static"):
        w = winners[p]
        key = _key(seed, stream_ids[p])
        hits = 0
        for t in range(n):
            base = counter0 + t * n_cls
            xw = means[p, w] + stds[p, w] * _normal(key, base + w)
            win = True
            for j in range(n_cls):
                if j != w:
                    xj = means[p, j] + stds[p, j] * _normal(key, base + j)
                    if xj > xw:
                        win = False
                        break
            if win:
                hits = hits + 1
        out[p] = (<double>hits) / n
    return out_arr


def softmax_avg(const double[:, ::1] means, const double[:, ::1] stds,
                Py_ssize_t n, uint64_t seed, const uint64_t[::1] stream_ids,
                uint64_t counter0=0, int threads=1):
    cdef Py_ssize_t n_pix = means.shape[0], n_cls = means.shape[1]
    out_arr = np.zeros((n_pix, n_cls))
    buf_arr = np.empty((max(threads, 1), n_cls))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] buf = buf_arr
    cdef Py_ssize_t p, t, j, tid
    cdef uint64_t key, base
    cdef double mx, s, v
    for p in prange(n_pix, nogil=True, num_threads=threads, schedule="static"):
        tid = _thread_id()
        key = _key(seed, stream_ids[p])
        for t in range(n):
            base = counter0 + t * n_cls
            mx = -1e308
            _normal_run(key, base, n_cls, &buf[tid, 0])
            for j in range(n_cls):
                v = means[p, j] + stds[p, j] * buf[tid, j]
                buf[tid, j] = v
                if v > mx:
                    mx = v
            s = 0.0
            for j in range(n_cls):
                v = exp(buf[tid, j] - mx)
                buf[tid, j] = v
                s = s + v
            for j in range(n_cls):
                out[p, j] = out[p, j] + buf[tid, j] / s
        for j in range(n_cls):
            out[p, j] = out[p, j] / n
    return out_arr


cdef extern from *:
    """
    #ifdef _OPENMP
    #include <omp.h>
    static int logitconf_thread_id(void) { return omp_get_thread_num(); }
    #else
    static int logitconf_thread_id(void) { return 0; }
    #endif
    """
    int logitconf_thread_id() noexcept nogil


cdef inline Py_ssize_t _thread_id() noexcept nogil:
    return logitconf_thread_id()
