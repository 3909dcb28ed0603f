# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: masked five-point stencil products, the smoothed
preconditioned CG iteration and upwind face fluxes.

Every routine here has a numpy twin in ``_kernels_py`` with the same
signature; ``ksns.kernels`` picks one at import time.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()

BACKEND = "cython"


cdef void _apply(const double[:, ::1] diag, const double[:, ::1] wx,
                 const double[:, ::1] wy, const double[:, ::1] x,
                 double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t ny = diag.shape[0], nx = diag.shape[1]
    cdef Py_ssize_t i, j
    cdef double s
    for j in range(ny):
        for i in range(nx):
            s = diag[j, i] * x[j, i]
            if i > 0:
                s -= wx[j, i] * x[j, i - 1]
            if i < nx - 1:
                s -= wx[j, i + 1] * x[j, i + 1]
            if j > 0:
                s -= wy[j, i] * x[j - 1, i]
            if j < ny - 1:
                s -= wy[j + 1, i] * x[j + 1, i]
            out[j, i] = s


def stencil_apply(double[:, ::1] diag, double[:, ::1] wx, double[:, ::1] wy,
                  double[:, ::1] x):
    """Return ``A @ x`` for the symmetric stencil (diag, wx, wy)."""
    out = np.empty((diag.shape[0], diag.shape[1]))
    cdef double[:, ::1] o = out
    with nogil:
        _apply(diag, wx, wy, x, o)
    return out


cdef inline double _dot(const double[:, ::1] a, const double[:, ::1] b) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double s = 0.0
    for j in range(a.shape[0]):
        for i in range(a.shape[1]):
            s += a[j, i] * b[j, i]
    return s


cdef inline double _maxabs(const double[:, ::1] a) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double s = 0.0, v
    for j in range(a.shape[0]):
        for i in range(a.shape[1]):
            v = fabs(a[j, i])
            if v > s:
                s = v
    return s


def pcg_smoothed(double[:, ::1] diag, double[:, ::1] wx, double[:, ::1] wy,
                 double[:, ::1] b, double[:, ::1] x0, double[:, ::1] inv_m,
                 double tol, Py_ssize_t max_iter):
    """Jacobi-preconditioned CG with minimal residual smoothing.

    Returns ``(y, iterations, history)`` where ``y`` is the smoothed iterate
    and ``history`` the 2-norms of its residual (non-increasing by
    construction). Stops once ``max|residual| <= tol``.
    """
    cdef Py_ssize_t ny = diag.shape[0], nx = diag.shape[1]
    cdef Py_ssize_t i, j, k = 0
    x_arr = np.array(x0, copy=True)
    cdef double[:, ::1] x = x_arr
    r_arr = np.empty((ny, nx))
    cdef double[:, ::1] r = r_arr
    cdef double[:, ::1] z = np.empty((ny, nx))
    cdef double[:, ::1] p = np.empty((ny, nx))
    cdef double[:, ::1] q = np.empty((ny, nx))
    y_arr = np.array(x0, copy=True)
    cdef double[:, ::1] y = y_arr
    s_arr = np.empty((ny, nx))
    cdef double[:, ::1] s = s_arr
    history = np.empty(max_iter + 1)
    cdef double[::1] hist = history
    cdef double rz, rz_new, alpha, beta, pq, dd, sd, eta, d, smax

    with nogil:
        _apply(diag, wx, wy, x, r)
        for j in range(ny):
            for i in range(nx):
                r[j, i] = b[j, i] - r[j, i]
                z[j, i] = inv_m[j, i] * r[j, i]
                p[j, i] = z[j, i]
                s[j, i] = r[j, i]
        rz = _dot(r, z)
        hist[0] = sqrt(_dot(s, s))
        while k < max_iter:
            if _maxabs(s) <= tol:
                break
            _apply(diag, wx, wy, p, q)
            pq = _dot(p, q)
            if pq <= 0.0:
                break
            alpha = rz / pq
            dd = 0.0
            sd = 0.0
            for j in range(ny):
                for i in range(nx):
                    x[j, i] += alpha * p[j, i]
                    r[j, i] -= alpha * q[j, i]
                    d = r[j, i] - s[j, i]
                    dd += d * d
                    sd += s[j, i] * d
            eta = -sd / dd if dd > 0.0 else 0.0
            rz_new = 0.0
            for j in range(ny):
                for i in range(nx):
                    y[j, i] += eta * (x[j, i] - y[j, i])
                    s[j, i] += eta * (r[j, i] - s[j, i])
                    z[j, i] = inv_m[j, i] * r[j, i]
                    rz_new += r[j, i] * z[j, i]
            k += 1
            hist[k] = sqrt(_dot(s, s))
            if rz == 0.0:
                break
            beta = rz_new / rz
            rz = rz_new
            for j in range(ny):
                for i in range(nx):
                    p[j, i] = z[j, i] + beta * p[j, i]
    return y_arr, k, history[: k + 1].copy()


def upwind_flux(double[:, ::1] vel, double[:, ::1] q, int axis):
    """Face flux ``vel * q_upwind`` for face array ``vel`` along ``axis``.

    ``vel`` has one more entry than ``q`` along ``axis``; the two outermost
    face layers get zero flux.
    """
    cdef Py_ssize_t a = vel.shape[0], b = vel.shape[1]
    out = np.zeros((a, b))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double v
    with nogil:
        if axis == 1:
            for j in range(a):
                for i in range(1, b - 1):
                    v = vel[j, i]
                    if v > 0.0:
                        o[j, i] = v * q[j, i - 1]
                    elif v < 0.0:
                        o[j, i] = v * q[j, i]
        else:
            for j in range(1, a - 1):
                for i in range(b):
                    v = vel[j, i]
                    if v > 0.0:
                        o[j, i] = v * q[j - 1, i]
                    elif v < 0.0:
                        o[j, i] = v * q[j, i]
    return out
