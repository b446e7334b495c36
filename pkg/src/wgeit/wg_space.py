"""Lowest-order weak Galerkin space: P1 interiors, P0 edge traces.

Interior functions use the local vertex-value (Lagrange) basis, so
``interior[t, k]`` is the value of ``v0`` at local vertex ``k`` of triangle
``t``. Traces are single-valued per mesh edge.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .quadrature import gauss_segment, triangle_points

# midpoint evaluation: (Q_b v0) on local edge k = mean of the two other vertices
MIDPOINT = 0.5 * (np.ones((3, 3)) - np.eye(3))

# inverse of the P1 mass matrix on T, up to the factor 3/|T|
_INV_MASS = np.array([[3.0, -1.0, -1.0], [-1.0, 3.0, -1.0], [-1.0, -1.0, 3.0]])


@dataclass
class WgField:
    interior: np.ndarray  # (nt, 3)
    traces: np.ndarray  # (ne,)

    def __add__(self, other):
        return WgField(self.interior + other.interior, self.traces + other.traces)

    def __rmul__(self, c):
        return WgField(c * self.interior, c * self.traces)

    @classmethod
    def zeros(cls, mesh):
        return cls(np.zeros((mesh.n_triangles, 3)), np.zeros(mesh.n_edges))

    def check(self, mesh):
        if self.interior.shape != (mesh.n_triangles, 3) or self.traces.shape != (mesh.n_edges,):
            raise ValueError(
                f"field shapes {self.interior.shape}/{self.traces.shape} do not match mesh "
                f"({mesh.n_triangles} triangles, {mesh.n_edges} edges)"
            )


def gradient_coefficients(mesh):
    """Per-triangle weights ``(nt, 3, 2)``: grad_w v = sum_k W[t, k] * v_b[e_k]."""
    le = mesh.edge_length[mesh.tri_edges]
    return le[..., None] * mesh.tri_normals / mesh.area[:, None, None]


def weak_gradient(mesh, field):
    """Piecewise-constant weak gradient ``(nt, 2)``.

    On each T: (1/|T|) sum over edges of v_b |e| n_e. Interior values do not
    enter at this order.
    """
    field.check(mesh)
    W = gradient_coefficients(mesh)
    return np.einsum("tkd,tk->td", W, field.traces[mesh.tri_edges])


def weak_gradient_matrix(mesh):
    """Sparse operator ``(2 nt, ne)`` mapping traces to stacked weak gradients."""
    W = gradient_coefficients(mesh)
    nt = mesh.n_triangles
    rows = (2 * np.arange(nt)[:, None, None] + np.arange(2)[None, None, :]).repeat(3, axis=1)
    cols = np.broadcast_to(mesh.tri_edges[:, :, None], W.shape)
    return sp.csr_matrix(
        (W.ravel(), (rows.ravel(), cols.ravel())), shape=(2 * nt, mesh.n_edges)
    )


def project_Q0(func, mesh, degree=4):
    """Element-wise L2 projection onto P1; returns vertex values ``(nt, 3)``.

    ``func`` takes arrays ``x, y`` of equal shape.
    """
    pts, w, bary = triangle_points(mesh.vertices, mesh.triangles, degree)
    vals = func(pts[..., 0], pts[..., 1])
    b = np.einsum("tq,tq,qk->tk", w, vals, bary)
    return 3.0 / mesh.area[:, None] * (b @ _INV_MASS.T)


def project_Qb(func, mesh, edges=None, npts=3):
    """Edge averages of ``func`` (L2 projection onto P0(e))."""
    if edges is None:
        edges = np.arange(mesh.n_edges)
    s, w = gauss_segment(npts)
    a = mesh.vertices[mesh.edges[edges, 0]]
    b = mesh.vertices[mesh.edges[edges, 1]]
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    return func(pts[..., 0], pts[..., 1]) @ w


def project_Qh(func, mesh, degree=4):
    return WgField(project_Q0(func, mesh, degree), project_Qb(func, mesh))


def project_gradient(grad_func, mesh, degree=4):
    """Element averages of a vector field ``grad_func(x, y) -> (gx, gy)``."""
    pts, w, _ = triangle_points(mesh.vertices, mesh.triangles, degree)
    gx, gy = grad_func(pts[..., 0], pts[..., 1])
    return np.column_stack([(w * gx).sum(1), (w * gy).sum(1)]) / mesh.area[:, None]


def trace_jumps(mesh, field):
    """``Q_b v0 - v_b`` on each local edge, ``(nt, 3)``."""
    return field.interior @ MIDPOINT.T - field.traces[mesh.tri_edges]


def stabilizer_weights(mesh):
    """``|e| / h_T`` for each local edge, ``(nt, 3)``."""
    return mesh.edge_length[mesh.tri_edges] / mesh.h_T[:, None]


def stabilizer_pairing(mesh, u, v):
    """s(u, v) = sum_T h_T^{-1} <Q_b u0 - u_b, Q_b v0 - v_b>_{dT}."""
    u.check(mesh)
    v.check(mesh)
    return float(np.sum(stabilizer_weights(mesh) * trace_jumps(mesh, u) * trace_jumps(mesh, v)))


def p1_gradients(mesh, interior):
    """Exact gradients of the element-wise linear interiors, ``(nt, 2)``."""
    P = mesh.vertices[mesh.triangles]
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    d1 = interior[:, 1] - interior[:, 0]
    d2 = interior[:, 2] - interior[:, 0]
    gx = (d1 * e2[:, 1] - d2 * e1[:, 1]) / det
    gy = (-d1 * e2[:, 0] + d2 * e1[:, 0]) / det
    return np.column_stack([gx, gy])


def l2_norm_p1(mesh, interior):
    """L2(Omega) norm of a discontinuous P1 field given by vertex values."""
    s = interior.sum(1)
    sq = (interior**2).sum(1)
    return float(np.sqrt(np.sum(mesh.area * (sq + s**2) / 12.0)))
