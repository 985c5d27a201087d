# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, INFINITY

cnp.import_array()

ctypedef fused real:
    float
    double


cdef void _distance_rows(const real[:, :, ::1] s, real[:, :, ::1] out,
                         bint strict, double[::1] gamma) noexcept nogil:
    cdef Py_ssize_t b, t, tau, hi
    cdef Py_ssize_t nb = s.shape[0], l = s.shape[2]
    cdef double m, z, acc
    for b in range(nb):
        for t in range(l):
            hi = t if strict else t + 1
            for tau in range(l):
                out[b, t, tau] = 0
            if hi == 0:
                continue
            m = -INFINITY
            for tau in range(hi):
                if s[b, t, tau] > m:
                    m = s[b, t, tau]
            z = 0.0
            for tau in range(hi):
                gamma[tau] = exp(s[b, t, tau] - m)
                z += gamma[tau]
            # suffix mass strictly after tau, accumulated right to left
            acc = 0.0
            for tau in range(hi - 1, -1, -1):
                out[b, t, tau] = <real>(fabs(<double>(t - tau)) * acc / z)
                acc += gamma[tau]


def context_distance(scores, bint strict):
    arr = np.ascontiguousarray(scores)
    if arr.dtype != np.float32 and arr.dtype != np.float64:
        arr = arr.astype(np.float64)
    shape = arr.shape
    l = shape[len(shape) - 1]
    flat = arr.reshape(-1, l, l)
    out = np.empty_like(flat)
    gamma = np.empty(l, dtype=np.float64)
    if flat.dtype == np.float32:
        _distance_rows[float](flat, out, strict, gamma)
    else:
        _distance_rows[double](flat, out, strict, gamma)
    return out.reshape(shape)


cdef void _scatter(real[:, ::1] out, const cnp.int64_t[::1] index,
                   const real[:, ::1] src) noexcept nogil:
    cdef Py_ssize_t k, c, row
    for k in range(index.shape[0]):
        row = index[k]
        for c in range(src.shape[1]):
            out[row, c] += src[k, c]


def scatter_add_rows(out, index, src):
    idx = np.ascontiguousarray(index, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= out.shape[0]):
        raise IndexError("scatter index out of range")
    if not out.flags.c_contiguous or out.dtype not in (np.float32, np.float64):
        np.add.at(out, idx, src)
        return out
    out2 = out.reshape(out.shape[0], -1)
    s = np.ascontiguousarray(src, dtype=out.dtype).reshape(idx.shape[0], -1)
    if out.dtype == np.float32:
        _scatter[float](out2, idx, s)
    else:
        _scatter[double](out2, idx, s)
    return out


cdef class _Search:
    cdef cnp.int64_t[:, ::1] a
    cdef cnp.int64_t[::1] bound
    cdef cnp.int64_t[::1] perm
    cdef cnp.int64_t[::1] best_perm
    cdef char[::1] used
    cdef Py_ssize_t n
    cdef cnp.int64_t best

    def __init__(self, a):
        self.a = a
        self.n = a.shape[0]
        self.bound = np.zeros(self.n + 1, dtype=np.int64)
        self.perm = np.zeros(self.n, dtype=np.int64)
        self.best_perm = np.zeros(self.n, dtype=np.int64)
        self.used = np.zeros(self.n, dtype=np.int8)
        self.best = -1
        cdef Py_ssize_t i
        for i in range(self.n - 1, -1, -1):
            self.bound[i] = self.bound[i + 1] + np.asarray(a[i]).max()

    cdef void run(self, Py_ssize_t i, cnp.int64_t total) noexcept nogil:
        cdef Py_ssize_t j
        if i == self.n:
            if total > self.best:
                self.best = total
                self.best_perm[:] = self.perm
            return
        if total + self.bound[i] <= self.best:
            return
        for j in range(self.n):
            if not self.used[j]:
                self.used[j] = 1
                self.perm[i] = j
                self.run(i + 1, total + self.a[i, j])
                self.used[j] = 0


def best_assignment(agreement):
    a = np.ascontiguousarray(agreement, dtype=np.int64)
    if a.shape[0] == 0:
        return np.zeros(0, dtype=np.int64), 0
    search = _Search(a)
    search.run(0, 0)
    return np.asarray(search.best_perm).copy(), int(search.best)


cdef void _monotonic_rows(const real[:, :, :, ::1] s, real[:, :, :, ::1] dist,
                          real[:, :, :, ::1] w, const double[::1] theta,
                          bint strict, bint have_dist, double[::1] buf) noexcept nogil:
    cdef Py_ssize_t b, h, t, tau, hi
    cdef Py_ssize_t nb = s.shape[0], nh = s.shape[1], l = s.shape[3]
    cdef double m, z, acc, th, logit
    for b in range(nb):
        for h in range(nh):
            th = theta[h]
            for t in range(l):
                hi = t if strict else t + 1
                for tau in range(hi, l):
                    w[b, h, t, tau] = 0
                    if not have_dist:
                        dist[b, h, t, tau] = 0
                if hi == 0:
                    continue
                if not have_dist:
                    m = -INFINITY
                    for tau in range(hi):
                        if s[b, h, t, tau] > m:
                            m = s[b, h, t, tau]
                    z = 0.0
                    for tau in range(hi):
                        buf[tau] = exp(s[b, h, t, tau] - m)
                        z += buf[tau]
                    acc = 0.0
                    for tau in range(hi - 1, -1, -1):
                        dist[b, h, t, tau] = <real>(fabs(<double>(t - tau)) * acc / z)
                        acc += buf[tau]
                m = -INFINITY
                for tau in range(hi):
                    logit = exp(-th * dist[b, h, t, tau]) * s[b, h, t, tau]
                    buf[tau] = logit
                    if logit > m:
                        m = logit
                z = 0.0
                for tau in range(hi):
                    buf[tau] = exp(buf[tau] - m)
                    z += buf[tau]
                for tau in range(hi):
                    w[b, h, t, tau] = <real>(buf[tau] / z)


def monotonic_weights(scores, theta, bint strict, dist=None):
    arr = np.ascontiguousarray(scores)
    if arr.dtype != np.float32 and arr.dtype != np.float64:
        arr = arr.astype(np.float64)
    shape = arr.shape
    nd = len(shape)
    nh, l = shape[nd - 3], shape[nd - 1]
    flat = arr.reshape(-1, nh, l, l)
    have = dist is not None
    if have:
        d = np.ascontiguousarray(dist, dtype=arr.dtype).reshape(flat.shape)
    else:
        d = np.empty_like(flat)
    w = np.empty_like(flat)
    th = np.ascontiguousarray(theta, dtype=np.float64).reshape(-1)
    buf = np.empty(l, dtype=np.float64)
    if flat.dtype == np.float32:
        _monotonic_rows[float](flat, d, w, th, strict, have, buf)
    else:
        _monotonic_rows[double](flat, d, w, th, strict, have, buf)
    return w.reshape(shape), d.reshape(shape)


cdef void _monotonic_back(const real[:, :, :, ::1] g, const real[:, :, :, ::1] w,
                          const real[:, :, :, ::1] s, const real[:, :, :, ::1] dist,
                          real[:, :, :, ::1] ds, double[::1] dtheta,
                          const double[::1] theta, bint strict) noexcept nogil:
    cdef Py_ssize_t b, h, t, tau, hi
    cdef Py_ssize_t nb = s.shape[0], nh = s.shape[1], l = s.shape[3]
    cdef double dot, dl, dec, th, acc
    for h in range(nh):
        dtheta[h] = 0.0
    for b in range(nb):
        for h in range(nh):
            th = theta[h]
            acc = 0.0
            for t in range(l):
                hi = t if strict else t + 1
                for tau in range(hi, l):
                    ds[b, h, t, tau] = 0
                dot = 0.0
                for tau in range(hi):
                    dot += g[b, h, t, tau] * w[b, h, t, tau]
                for tau in range(hi):
                    dl = w[b, h, t, tau] * (g[b, h, t, tau] - dot)
                    dec = exp(-th * dist[b, h, t, tau])
                    ds[b, h, t, tau] = <real>(dl * dec)
                    acc -= dl * s[b, h, t, tau] * dec * dist[b, h, t, tau]
            dtheta[h] += acc


def monotonic_weights_backward(grad, weights, scores, dist, theta, bint strict):
    s = np.ascontiguousarray(scores)
    shape = s.shape
    nd = len(shape)
    nh, l = shape[nd - 3], shape[nd - 1]
    fs = s.reshape(-1, nh, l, l)
    g = np.ascontiguousarray(grad, dtype=s.dtype).reshape(fs.shape)
    w = np.ascontiguousarray(weights, dtype=s.dtype).reshape(fs.shape)
    d = np.ascontiguousarray(dist, dtype=s.dtype).reshape(fs.shape)
    ds = np.empty_like(fs)
    dth = np.zeros(nh, dtype=np.float64)
    th = np.ascontiguousarray(theta, dtype=np.float64).reshape(-1)
    if fs.dtype == np.float32:
        _monotonic_back[float](g, w, fs, d, ds, dth, th, strict)
    else:
        _monotonic_back[double](g, w, fs, d, ds, dth, th, strict)
    return ds.reshape(shape), dth.astype(s.dtype)
