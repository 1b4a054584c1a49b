# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_fallback.py`` for the reference semantics.

Per-worker loops run under ``prange`` when OpenMP is available. Each row is
touched by exactly one thread and reductions are per-coordinate and
sequential, so the thread count never changes a result.
"""

import numpy as np

from cython.parallel cimport prange
from libc.math cimport sqrt


def mean_rows(const double[:, ::1] a):
    cdef Py_ssize_t n = a.shape[0], d = a.shape[1], i, j
    cdef double hi, lo, s, bb, v, mn, mx, q, c, qh, ql, r, m
    cdef double dn = <double>n
    out = np.empty(d)
    cdef double[::1] o = out
    for i in range(d):
        hi = a[0, i]
        lo = 0.0
        mn = hi
        mx = hi
        for j in range(1, n):
            v = a[j, i]
            s = hi + v
            bb = s - hi
            lo = lo + ((hi - (s - bb)) + (v - bb))
            hi = s
            if v < mn:
                mn = v
            if v > mx:
                mx = v
        q = hi / dn
        c = 134217729.0 * q
        qh = c - (c - q)
        ql = q - qh
        r = ((hi - qh * dn) - ql * dn) + lo
        m = q + r / dn
        if m < mn:
            m = mn
        if m > mx:
            m = mx
        o[i] = m
    return out


def clip_rows(double[:, ::1] g, double rho):
    cdef Py_ssize_t i, j
    cdef double v
    for i in range(g.shape[0]):
        for j in range(g.shape[1]):
            v = g[i, j]
            if v > rho:
                v = rho
            if v < -rho:
                v = -rho
            g[i, j] = v


def row_norms(const double[:, ::1] g):
    cdef Py_ssize_t i, j
    cdef double acc
    out = np.empty(g.shape[0])
    cdef double[::1] o = out
    for i in range(g.shape[0]):
        acc = 0.0
        for j in range(g.shape[1]):
            acc = acc + g[i, j] * g[i, j]
        o[i] = sqrt(acc)
    return out


def clip_rows_norm(double[:, ::1] g, double rho):
    cdef Py_ssize_t i, j
    cdef double acc, f
    for i in range(g.shape[0]):
        acc = 0.0
        for j in range(g.shape[1]):
            acc = acc + g[i, j] * g[i, j]
        acc = sqrt(acc)
        if acc > rho:
            f = rho / acc
            for j in range(g.shape[1]):
                g[i, j] = g[i, j] * f


def rosenbrock_grad(const double[:, ::1] x, double[:, ::1] out):
    cdef Py_ssize_t i
    cdef double x1, x2, r
    for i in range(x.shape[0]):
        x1 = x[i, 0]
        x2 = x[i, 1]
        r = x2 - x1 * x1
        out[i, 0] = -2.0 * (1.0 - x1) - 400.0 * x1 * r
        out[i, 1] = 200.0 * r


def quadratic_grad(const double[:, ::1] x, const double[:, ::1] centers,
                   const double[::1] curvature, double[:, ::1] out):
    cdef Py_ssize_t i, j
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            out[i, j] = curvature[j] * (x[i, j] - centers[i, j])


def adam_step(double[:, ::1] x, double[:, ::1] u, double[:, ::1] v,
              double[:, ::1] vt, const double[:, ::1] g,
              double beta1, double beta2, double lam2, double eta,
              bint amsgrad, int threads=1):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double c1 = 1.0 - beta1, c2 = 1.0 - beta2, gi, veff
    for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
        for j in range(d):
            gi = g[i, j]
            u[i, j] = beta1 * u[i, j] + c1 * gi
            v[i, j] = beta2 * v[i, j] + c2 * (gi * gi)
            veff = v[i, j]
            if amsgrad:
                if vt[i, j] > veff:
                    veff = vt[i, j]
                vt[i, j] = veff
            x[i, j] = x[i, j] - (eta / sqrt(veff + lam2)) * u[i, j]


def adopt_step(double[:, ::1] x, double[:, ::1] m, double[:, ::1] v,
               const double[:, ::1] g, double beta1, double beta2,
               double eps, double eta, int threads=1):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double c1 = 1.0 - beta1, c2 = 1.0 - beta2, gi, denom
    for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
        for j in range(d):
            gi = g[i, j]
            denom = sqrt(v[i, j])
            if denom < eps:
                denom = eps
            v[i, j] = beta2 * v[i, j] + c2 * (gi * gi)
            m[i, j] = beta1 * m[i, j] + c1 * (gi / denom)
            x[i, j] = x[i, j] - eta * m[i, j]


def sgdm_step(double[:, ::1] x, double[:, ::1] u, const double[:, ::1] g,
              double beta, double eta, int threads=1):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double c = 1.0 - beta
    for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
        for j in range(d):
            u[i, j] = beta * u[i, j] + c * g[i, j]
            x[i, j] = x[i, j] - eta * u[i, j]
