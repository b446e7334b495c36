"""Quadrature rules on the reference triangle and on segments."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_segment(npts=3):
    """Gauss-Legendre rule on [0, 1]; exact for degree ``2*npts - 1``."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Collapsed (Duffy) Gauss rule on the reference triangle (0,0),(1,0),(0,1).

    Returns barycentric coordinates ``(nq, 3)`` and weights summing to 1/2.
    A k-point Gauss rule per direction is exact for total degree ``2k - 2``.
    """
    k = max(1, int(np.ceil((degree + 2) / 2)))
    s, ws = gauss_segment(k)
    S, T = np.meshgrid(s, s, indexing="ij")
    W = np.outer(ws, ws)
    # (s, t) in unit square -> (xi, eta) = (s, t (1 - s)), Jacobian (1 - s)
    xi = S.ravel()
    eta = (T * (1.0 - S)).ravel()
    w = (W * (1.0 - S)).ravel()
    bary = np.column_stack([1.0 - xi - eta, xi, eta])
    return bary, w


def triangle_points(vertices, triangles, degree):
    """Physical quadrature points ``(nt, nq, 2)`` and weights ``(nt, nq)``."""
    bary, w = triangle_rule(degree)
    P = vertices[triangles]  # (nt, 3, 2)
    pts = np.einsum("qk,tkd->tqd", bary, P)
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    det = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    return pts, det[:, None] * w[None, :], bary
