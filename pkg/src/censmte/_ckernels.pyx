# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Must agree with :mod:`censmte._pykernels` to rounding."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs

cnp.import_array()


cdef inline double _softplus(double t) noexcept nogil:
    if t > 0:
        return t + log1p(exp(-t))
    return log1p(exp(t))


cdef inline double _expit(double t) noexcept nogil:
    cdef double e
    if t >= 0:
        return 1.0 / (1.0 + exp(-t))
    e = exp(t)
    return e / (1.0 + e)


cdef inline void _kahan_add(double* acc, double* comp, double x) noexcept nogil:
    # compensated summation: line-search comparisons near the optimum need
    # log-likelihood differences far below the naive summation error
    cdef double yv = x - comp[0]
    cdef double t = acc[0] + yv
    comp[0] = (t - acc[0]) - yv
    acc[0] = t


cdef inline double _index(const double[::1] theta, const double[:, ::1] dense,
                          const cnp.int64_t[::1] xcode, Py_ssize_t i, Py_ssize_t q) noexcept nogil:
    cdef double eta = 0.0
    cdef Py_ssize_t j
    for j in range(q):
        eta += dense[i, j] * theta[j]
    if xcode[i] > 0:
        eta += theta[q + xcode[i] - 1]
    return eta


def logit_loglik(const double[::1] theta, const double[:, ::1] dense,
                 const cnp.int64_t[::1] xcode, const double[::1] b, const double[::1] w):
    cdef Py_ssize_t n = dense.shape[0], q = dense.shape[1], i
    cdef double eta, acc = 0.0, comp = 0.0
    with nogil:
        for i in range(n):
            if w[i] == 0.0:
                continue
            eta = _index(theta, dense, xcode, i, q)
            _kahan_add(&acc, &comp, w[i] * (b[i] * eta - _softplus(eta)))
    return acc / n


def logit_derivs(const double[::1] theta, const double[:, ::1] dense,
                 const cnp.int64_t[::1] xcode, const double[::1] b, const double[::1] w):
    """Mean weighted log-likelihood, score and Hessian.

    Parameter layout is ``[dense columns..., dummies for x codes 1..nx-1]``.
    """
    cdef Py_ssize_t n = dense.shape[0], q = dense.shape[1]
    cdef Py_ssize_t p = theta.shape[0]
    cdef Py_ssize_t i, j, l, kx
    cdef double eta, mu, r, s, acc = 0.0, comp = 0.0
    grad_arr = np.zeros(p)
    hess_arr = np.zeros((p, p))
    cdef double[::1] g = grad_arr
    cdef double[:, ::1] h = hess_arr
    with nogil:
        for i in range(n):
            if w[i] == 0.0:
                continue
            eta = _index(theta, dense, xcode, i, q)
            mu = _expit(eta)
            _kahan_add(&acc, &comp, w[i] * (b[i] * eta - _softplus(eta)))
            r = w[i] * (b[i] - mu)
            s = w[i] * mu * (1.0 - mu)
            for j in range(q):
                g[j] += r * dense[i, j]
                for l in range(j + 1):
                    h[j, l] -= s * dense[i, j] * dense[i, l]
            if xcode[i] > 0:
                kx = q + xcode[i] - 1
                g[kx] += r
                h[kx, kx] -= s
                for j in range(q):
                    h[kx, j] -= s * dense[i, j]
        for j in range(p):
            g[j] /= n
            for l in range(j + 1):
                h[j, l] /= n
                h[l, j] = h[j, l]
    return acc / n, grad_arr, hess_arr


def dmtr_mean(const double[::1] offsets, const double[::1] sv, const double[::1] dv, w=None):
    """``out[j] = mean_i dv[j] * G (1 - G)`` with ``G = expit(offsets[i] + sv[j])``.

    With ``w`` the mean is weighted, ``sum_i w[i] * ... / sum_i w[i]``.
    """
    cdef Py_ssize_t m = offsets.shape[0], nv = sv.shape[0], i, j
    cdef double t, e, acc, total
    cdef double[::1] wv
    cdef bint weighted = w is not None
    out_arr = np.zeros(nv)
    cdef double[::1] out = out_arr
    if m == 0:
        out_arr[:] = np.nan
        return out_arr
    if weighted:
        wv = np.ascontiguousarray(w, dtype=np.float64)
        total = float(np.sum(wv))
    with nogil:
        for j in range(nv):
            acc = 0.0
            if weighted:
                for i in range(m):
                    t = fabs(offsets[i] + sv[j])
                    e = exp(-t)
                    acc += wv[i] * e / ((1.0 + e) * (1.0 + e))
                out[j] = dv[j] * acc / total
            else:
                for i in range(m):
                    t = fabs(offsets[i] + sv[j])
                    e = exp(-t)
                    acc += e / ((1.0 + e) * (1.0 + e))
                out[j] = dv[j] * acc / m
    return out_arr
