"""Misfit and its gradient through the adjoint (dual) WG problem."""

from dataclasses import dataclass

import numpy as np

from .cem_forward import ForwardSolution, assemble, center, solve_forward
from .wg_space import WgField, weak_gradient


@dataclass
class AdjointSolution:
    z: WgField
    Z: np.ndarray


def solve_adjoint(system, residual):
    """Solve ``a_s(sigma, (z, Z), (v, V)) = <r, V>`` for one or more residuals.

    The form is symmetric, so this reuses the forward factorization. Residuals
    are projected onto the zero-sum space first.
    """
    r = center(residual)
    sols = solve_forward(system, r)
    if isinstance(sols, ForwardSolution):
        return AdjointSolution(sols.u, sols.U)
    return [AdjointSolution(s.u, s.U) for s in sols]


def misfit_gradient(mesh, sigma, forward, adjoint):
    """``d f / d sigma_T = -2 |T| sum_k grad_w u_k . grad_w z_k``."""
    if len(forward) != len(adjoint):
        raise ValueError(f"{len(forward)} forward solutions but {len(adjoint)} adjoint solutions")
    g = np.zeros(mesh.n_triangles)
    for fw, ad in zip(forward, adjoint):
        gu = weak_gradient(mesh, fw.u)
        gz = weak_gradient(mesh, ad.z)
        g += np.einsum("td,td->t", gu, gz)
    return -2.0 * mesh.area * g


def misfit(U, data):
    """``sum_k ||U_k - U^delta_k||^2`` with rows compared after centering."""
    return float(np.sum((center(U) - center(data)) ** 2))


class MisfitObjective:
    """f(sigma) and its gradient for fixed patterns and data, with a one-point cache."""

    def __init__(self, mesh, electrodes, patterns, data):
        self.mesh = mesh
        self.electrodes = electrodes
        self.patterns = np.atleast_2d(np.asarray(patterns, dtype=float))
        self.data = center(np.atleast_2d(np.asarray(data, dtype=float)))
        if self.data.shape != (len(self.patterns), electrodes.L):
            raise ValueError(
                f"data shape {self.data.shape} does not match {len(self.patterns)} patterns "
                f"x {electrodes.L} electrodes"
            )
        self._key = None
        self._state = None
        self.n_solves = 0

    def _forward(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        key = sigma.tobytes()
        if key != self._key:
            system = assemble(self.mesh, self.electrodes, sigma)
            sols = solve_forward(system, self.patterns)
            U = np.array([s.U for s in sols])
            self._key, self._state = key, (system, sols, U)
            self.n_solves += 1
        return self._state

    def value(self, sigma):
        _, _, U = self._forward(sigma)
        return misfit(U, self.data)

    def gradient(self, sigma):
        system, sols, U = self._forward(sigma)
        adj = solve_adjoint(system, U - self.data)
        return misfit_gradient(self.mesh, sigma, sols, adj)

    __call__ = value


def fd_sweep(func, grad, x, direction, steps):
    """Central differences of ``func`` along ``direction`` against ``grad . direction``.

    Returns rows ``(t, fd_value, analytic_value, rel_err)``.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(direction, dtype=float)
    exact = float(np.sum(grad(x) * d))
    rows = []
    for t in steps:
        fd = (func(x + t * d) - func(x - t * d)) / (2.0 * t)
        rows.append((float(t), fd, exact, abs(fd - exact) / max(abs(exact), np.finfo(float).tiny)))
    return rows


def fd_slope(rows, f_scale, safety=100.0):
    """Log-log slope of the FD error against ``t``, ignoring rounding-dominated points.

    A central difference of a function of size ``f_scale`` carries a rounding
    error of about ``eps * f_scale / t``; points whose error is within
    ``safety`` times that level are dropped. Returns ``(slope, n_used)``.
    """
    eps = np.finfo(float).eps
    t = np.array([r[0] for r in rows])
    err = np.array([abs(r[1] - r[2]) for r in rows])
    keep = err > safety * eps * abs(f_scale) / t
    if keep.sum() < 2:
        return float("nan"), int(keep.sum())
    slope = np.polyfit(np.log(t[keep]), np.log(err[keep]), 1)[0]
    return float(slope), int(keep.sum())
