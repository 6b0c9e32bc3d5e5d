# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled shape-function kernels.

Same signatures and results as ``_kernels_py``; loops are written out so the
per-point work stays in C.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, floor, sqrt

cnp.import_array()


cdef inline double _psi(double z) nogil:
    if z <= 0.5:
        return 2.0 / 3.0 - 4.0 * z * z + 4.0 * z * z * z
    elif z <= 1.0:
        return (4.0 / 3.0) * (1.0 - z) * (1.0 - z) * (1.0 - z)
    return 0.0


cdef inline double _dpsi(double z) nogil:
    if z <= 0.5:
        return -8.0 * z + 12.0 * z * z
    elif z <= 1.0:
        return -4.0 * (1.0 - z) * (1.0 - z)
    return 0.0


cdef inline double _psi_s(double z, long shift) nogil:
    # shift drops the part the patch polynomials absorb: 1 the constant, 2 also the z^2 term
    if shift == 2:
        return _psi(z) - 2.0 / 3.0 + 4.0 * z * z
    if shift == 1:
        return _psi(z) - 2.0 / 3.0
    return _psi(z)


cdef inline double _dpsi_s(double z, long shift) nogil:
    if shift == 2:
        return _dpsi(z) + 8.0 * z
    return _dpsi(z)


def cubic_spline(z):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] zf = np.ascontiguousarray(z, dtype=np.float64).ravel()
    cdef Py_ssize_t i, n = zf.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    for i in range(n):
        if zf[i] < 0:
            raise ValueError("cubic spline argument must be non-negative")
        out[i] = _psi(zf[i])
    return out.reshape(np.shape(z))


def cubic_spline_deriv(z):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] zf = np.ascontiguousarray(z, dtype=np.float64).ravel()
    cdef Py_ssize_t i, n = zf.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    for i in range(n):
        if zf[i] < 0:
            raise ValueError("cubic spline argument must be non-negative")
        out[i] = _dpsi(zf[i])
    return out.reshape(np.shape(z))


def eval_basis_1d(x, double lo, double h, long n_elem, patch_start, centers,
                  A, K, long ns, double radius, double scale, long p, long shift=0):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef long[::1] ps = np.ascontiguousarray(patch_start, dtype=np.int64)
    cdef double[::1] cv = np.ascontiguousarray(centers, dtype=np.float64)
    cdef double[:, :, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, :, ::1] Kv = np.ascontiguousarray(K, dtype=np.float64)
    cdef Py_ssize_t npts = xv.shape[0]
    cdef long m = p + 1
    cols_a = np.empty((npts, 2 * ns), dtype=np.int64)
    vals_a = np.empty((npts, 2 * ns))
    dvals_a = np.empty((npts, 2 * ns))
    cdef long[:, ::1] cols = cols_a
    cdef double[:, ::1] vals = vals_a
    cdef double[:, ::1] dvals = dvals_a
    cdef double[::1] psi = np.empty(ns)
    cdef double[::1] dpsi = np.empty(ns)
    cdef double[::1] P = np.empty(m)
    cdef double[::1] dP = np.empty(m)
    cdef Py_ssize_t i, j, k, q, side
    cdef long e, node, start
    cdef double xi, t, nl, dnl, diff, r, sgn, zeta, w, dw
    with nogil:
        for i in range(npts):
            xi = xv[i]
            e = <long>floor((xi - lo) / h)
            if e < 0:
                e = 0
            if e > n_elem - 1:
                e = n_elem - 1
            t = (xi - (lo + e * h)) / h
            for side in range(2):
                node = e + side
                if side == 0:
                    nl = 1.0 - t
                    dnl = -1.0 / h
                else:
                    nl = t
                    dnl = 1.0 / h
                start = ps[node]
                for j in range(ns):
                    diff = xi - (lo + (start + j) * h)
                    r = fabs(diff) / radius
                    psi[j] = _psi_s(r, shift)
                    sgn = 1.0 if diff > 0 else (-1.0 if diff < 0 else 0.0)
                    dpsi[j] = _dpsi_s(r, shift) * sgn / radius
                zeta = (xi - cv[node]) / scale
                P[0] = 1.0
                dP[0] = 0.0
                for q in range(1, m):
                    P[q] = P[q - 1] * zeta
                    dP[q] = q * P[q - 1] / scale
                for k in range(ns):
                    w = 0.0
                    dw = 0.0
                    for j in range(ns):
                        w += psi[j] * Av[node, j, k]
                        dw += dpsi[j] * Av[node, j, k]
                    for q in range(m):
                        w += P[q] * Kv[node, q, k]
                        dw += dP[q] * Kv[node, q, k]
                    cols[i, side * ns + k] = start + k
                    vals[i, side * ns + k] = nl * w
                    dvals[i, side * ns + k] = dnl * w + nl * dw
    return cols_a, vals_a, dvals_a


def eval_patch_nd(points, coords, origin, scale, hvec, double radius, A, K, exps, long shift=0):
    cdef double[:, ::1] pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    cdef double[:, ::1] cx = np.ascontiguousarray(coords, dtype=np.float64)
    cdef double[::1] org = np.ascontiguousarray(origin, dtype=np.float64)
    cdef double[::1] sc = np.ascontiguousarray(scale, dtype=np.float64)
    cdef double[::1] hv = np.ascontiguousarray(hvec, dtype=np.float64)
    cdef double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, ::1] Kv = np.ascontiguousarray(K, dtype=np.float64)
    cdef long[:, ::1] ex = np.ascontiguousarray(exps, dtype=np.int64)
    cdef Py_ssize_t npts = pts.shape[0], d = pts.shape[1]
    cdef Py_ssize_t ns = cx.shape[0], m = ex.shape[0]
    W_a = np.zeros((npts, ns))
    dW_a = np.zeros((npts, ns, d))
    cdef double[:, ::1] W = W_a
    cdef double[:, :, ::1] dW = dW_a
    cdef double[::1] psi = np.empty(ns)
    cdef double[:, ::1] gpsi = np.empty((ns, d))
    cdef double[::1] P = np.empty(m)
    cdef double[:, ::1] dP = np.empty((m, d))
    cdef double[::1] zeta = np.empty(d)
    cdef double[::1] diff = np.empty(d)
    cdef Py_ssize_t i, j, k, q, a, b
    cdef double dist, r, dp, prod, g
    cdef long e
    with nogil:
        for i in range(npts):
            for j in range(ns):
                dist = 0.0
                for a in range(d):
                    diff[a] = (pts[i, a] - cx[j, a]) / hv[a]
                    dist += diff[a] * diff[a]
                dist = sqrt(dist)
                r = dist / radius
                psi[j] = _psi_s(r, shift)
                dp = _dpsi_s(r, shift) / radius
                for a in range(d):
                    if dist > 0:
                        gpsi[j, a] = dp * diff[a] / dist / hv[a]
                    else:
                        gpsi[j, a] = 0.0
            for a in range(d):
                zeta[a] = (pts[i, a] - org[a]) / sc[a]
            for q in range(m):
                prod = 1.0
                for a in range(d):
                    e = ex[q, a]
                    prod *= zeta[a] ** e
                P[q] = prod
                for a in range(d):
                    g = 1.0
                    for b in range(d):
                        e = ex[q, b]
                        if b == a:
                            if e > 0:
                                g *= e * zeta[b] ** (e - 1) / sc[b]
                            else:
                                g = 0.0
                        else:
                            g *= zeta[b] ** e
                    dP[q, a] = g
            for k in range(ns):
                for j in range(ns):
                    W[i, k] += psi[j] * Av[j, k]
                    for a in range(d):
                        dW[i, k, a] += gpsi[j, a] * Av[j, k]
                for q in range(m):
                    W[i, k] += P[q] * Kv[q, k]
                    for a in range(d):
                        dW[i, k, a] += dP[q, a] * Kv[q, k]
    return W_a, dW_a
