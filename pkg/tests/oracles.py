"""Independent reference implementations used by the tests.

Everything here is plain dense numpy written from the textbook formulas,
sharing no code with the package.
"""

import numpy as np


def linear_fe_1d(x):
    """Stiffness, mass and the loads of 1 and x for hat functions on nodes ``x``."""
    n = len(x)
    K = np.zeros((n, n))
    M = np.zeros((n, n))
    m0 = np.zeros(n)
    m1 = np.zeros(n)
    for e in range(n - 1):
        a, b = x[e], x[e + 1]
        L = b - a
        K[e:e + 2, e:e + 2] += np.array([[1.0, -1.0], [-1.0, 1.0]]) / L
        M[e:e + 2, e:e + 2] += L / 6 * np.array([[2.0, 1.0], [1.0, 2.0]])
        m0[e:e + 2] += L / 2
        m1[e] += L * (2 * a + b) / 6
        m1[e + 1] += L * (a + 2 * b) / 6
    return K, M, m0, m1


def two_level_linear_fe(hc, hf, fine_box):
    """Composite linear FE for ``-lap u = 1 + xy`` on the unit square, ``u = 0`` on the boundary.

    The space is coarse hats (interior) plus fine hats interior to
    ``fine_box``, both written on the fine grid, solved by least squares on
    the Galerkin system. Returns ``(u_coarse_nodes, u_fine_box_nodes,
    coarse_outside_mask)``.
    """
    nf = int(round(1 / hf)) + 1
    nc = int(round(1 / hc)) + 1
    r = (nf - 1) // (nc - 1)
    xu = np.linspace(0.0, 1.0, nf)
    xc = np.linspace(0.0, 1.0, nc)
    K, M, a0, a1 = linear_fe_1d(xu)
    KU = np.kron(K, M) + np.kron(M, K)
    bU = np.kron(a0, a0) + np.kron(a1, a1)
    P1 = np.array([np.interp(xu, xc, np.eye(nc)[i]) for i in range(nc)]).T
    Pc = np.kron(P1, P1)
    cint = [i for i in range(nc * nc) if 0 < i // nc < nc - 1 and 0 < i % nc < nc - 1]
    eps = 1e-12
    fx = np.flatnonzero((xu > fine_box[0][0] + eps) & (xu < fine_box[0][1] - eps))
    fy = np.flatnonzero((xu > fine_box[1][0] + eps) & (xu < fine_box[1][1] - eps))
    Pf = np.zeros((nf * nf, len(fx) * len(fy)))
    for a, i in enumerate(fx):
        for b, j in enumerate(fy):
            Pf[i * nf + j, a * len(fy) + b] = 1.0
    Pg = np.hstack([Pc[:, cint], Pf])
    c = np.linalg.lstsq(Pg.T @ KU @ Pg, Pg.T @ bU, rcond=1e-12)[0]
    u = (Pg @ c).reshape(nf, nf)
    uc = u[::r, ::r]
    ix = np.flatnonzero((xu >= fine_box[0][0] - eps) & (xu <= fine_box[0][1] + eps))
    iy = np.flatnonzero((xu >= fine_box[1][0] - eps) & (xu <= fine_box[1][1] + eps))
    Xc, Yc = np.meshgrid(xc, xc, indexing="ij")
    inside = (Xc >= fine_box[0][0] - eps) & (Xc <= fine_box[0][1] + eps) & (Yc >= fine_box[1][0] - eps) & (Yc <= fine_box[1][1] + eps)
    return uc, u[np.ix_(ix, iy)], ~inside


def gauss_legendre_dense(f, lo, hi, n_cells=400, q=10):
    """Composite Gauss-Legendre integral of ``f`` over ``[lo, hi]`` (vectorised ``f``)."""
    x, w = np.polynomial.legendre.leggauss(q)
    edges = np.linspace(lo, hi, n_cells + 1)
    a, b = edges[:-1, None], edges[1:, None]
    pts = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    wts = (0.5 * (b - a) * w).ravel()
    return pts, wts
