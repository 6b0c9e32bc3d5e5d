"""Pure numpy implementations of the hot shape-function kernels.

These mirror the compiled routines in ``_kernels.pyx`` one-to-one and are
used when the extension is not built (or ``MLVMS_PURE_PYTHON=1``).
"""

from __future__ import annotations

import numpy as np


def cubic_spline(z):
    """Cubic spline kernel with support radius 1.

    Parameters
    ----------
    z : array_like
        Normalized non-negative distances.

    Returns
    -------
    ndarray
        Kernel values, zero for ``z > 1``.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("cubic spline argument must be non-negative")
    out = np.zeros_like(z)
    inner = z <= 0.5
    outer = (z > 0.5) & (z <= 1.0)
    zi = z[inner]
    zo = z[outer]
    out[inner] = 2.0 / 3.0 - 4.0 * zi**2 + 4.0 * zi**3
    out[outer] = (4.0 / 3.0) * (1.0 - zo) ** 3
    return out


def cubic_spline_deriv(z):
    """Derivative of :func:`cubic_spline` with respect to ``z``."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("cubic spline argument must be non-negative")
    out = np.zeros_like(z)
    inner = z <= 0.5
    outer = (z > 0.5) & (z <= 1.0)
    zi = z[inner]
    zo = z[outer]
    out[inner] = -8.0 * zi + 12.0 * zi**2
    out[outer] = -4.0 * (1.0 - zo) ** 2
    return out


def shifted_kernel(z, shift=0):
    """Kernel and derivative minus the part the patch polynomials absorb.

    ``shift=1`` drops the constant ``2/3`` (any ``p``), ``shift=2`` also the
    ``-4 z^2`` term (``p >= 2``). The patch functions are unchanged; only the
    cancellation that grows with the dilation ``a`` goes away.
    """
    psi = cubic_spline(z)
    dpsi = cubic_spline_deriv(z)
    if shift:
        psi = psi - 2.0 / 3.0
    if shift == 2:
        z = np.asarray(z, dtype=float)
        psi = psi + 4.0 * z**2
        dpsi = dpsi + 8.0 * z
    return psi, dpsi


def eval_basis_1d(x, lo, h, n_elem, patch_start, centers, A, K, ns, radius, scale, p, shift=0):
    """Evaluate 1D convolution shape functions and derivatives at points.

    Every point lives in one element ``[x_e, x_{e+1}]``; its shape functions
    are ``N_e W^e + N_{e+1} W^{e+1}`` where ``W^I`` are the patch functions
    of node ``I``.

    Returns
    -------
    cols : (npts, 2*ns) int64
        Global node index of each contribution (duplicates possible).
    vals, dvals : (npts, 2*ns) float
        Shape function values and x-derivatives.
    """
    x = np.asarray(x, dtype=float)
    npts = x.shape[0]
    e = np.floor((x - lo) / h).astype(np.int64)
    np.clip(e, 0, n_elem - 1, out=e)
    t = (x - (lo + e * h)) / h
    m = p + 1
    cols = np.empty((npts, 2 * ns), dtype=np.int64)
    vals = np.empty((npts, 2 * ns))
    dvals = np.empty((npts, 2 * ns))
    offs = np.arange(ns)
    powers = np.arange(m)
    for side in (0, 1):
        node = e + side
        if side == 0:
            nl, dnl = 1.0 - t, np.full(npts, -1.0 / h)
        else:
            nl, dnl = t, np.full(npts, 1.0 / h)
        start = patch_start[node]
        idx = start[:, None] + offs[None, :]
        xj = lo + idx * h
        diff = x[:, None] - xj
        r = np.abs(diff) / radius
        psi, dpsi = shifted_kernel(r, shift)
        dpsi = dpsi * np.sign(diff) / radius
        zeta = (x - centers[node]) / scale
        P = zeta[:, None] ** powers[None, :]
        dP = np.zeros_like(P)
        if m > 1:
            dP[:, 1:] = powers[None, 1:] * zeta[:, None] ** (powers[None, 1:] - 1) / scale
        An = A[node]
        Kn = K[node]
        W = np.einsum("pj,pjk->pk", psi, An) + np.einsum("pj,pjk->pk", P, Kn)
        dW = np.einsum("pj,pjk->pk", dpsi, An) + np.einsum("pj,pjk->pk", dP, Kn)
        sl = slice(side * ns, (side + 1) * ns)
        cols[:, sl] = idx
        vals[:, sl] = nl[:, None] * W
        dvals[:, sl] = dnl[:, None] * W + nl[:, None] * dW
    return cols, vals, dvals


def eval_patch_nd(points, coords, origin, scale, hvec, radius, A, K, exps, shift=0):
    """Evaluate one d-D radial patch's functions and gradients.

    Parameters
    ----------
    points : (npts, d)
    coords : (ns, d)
        Patch node coordinates.
    origin, scale : (d,)
        Local polynomial frame, ``zeta = (x - origin) / scale``.
    hvec : (d,)
        Element sizes used to normalize radial distances.
    radius : float
        Support radius in element units.
    A : (ns, ns), K : (m, ns), exps : (m, d) int

    Returns
    -------
    W : (npts, ns)
    dW : (npts, ns, d)
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    diff = (points[:, None, :] - coords[None, :, :]) / hvec
    dist = np.sqrt(np.sum(diff**2, axis=2))
    r = dist / radius
    psi, dpsi = shifted_kernel(r, shift)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(dist[:, :, None] > 0, diff / dist[:, :, None], 0.0)
    gpsi = (dpsi / radius)[:, :, None] * unit / hvec
    zeta = (points - origin) / scale
    d = points.shape[1]
    P = np.ones((points.shape[0], exps.shape[0]))
    dP = np.zeros((points.shape[0], exps.shape[0], d))
    for k in range(d):
        P *= zeta[:, k : k + 1] ** exps[None, :, k]
    for k in range(d):
        g = np.ones_like(P)
        for j in range(d):
            if j == k:
                ej = exps[None, :, j]
                g *= np.where(ej > 0, ej * zeta[:, j : j + 1] ** np.maximum(ej - 1, 0), 0.0) / scale[j]
            else:
                g *= zeta[:, j : j + 1] ** exps[None, :, j]
        dP[:, :, k] = g
    W = psi @ A + P @ K
    dW = np.einsum("pjk,jn->pnk", gpsi, A) + np.einsum("pjk,jn->pnk", dP, K)
    return W, dW
