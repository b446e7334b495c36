"""Discrete total variation on piecewise constants and its proximal map.

The proximal map of ``(1/L) alpha N_h`` over the box ``[lam, 1/lam]`` is the
box-constrained anisotropic TV denoising problem

    min_{x in C} ||x - d||^2 + 2 beta TV(x),

solved by fast gradient projection on its dual. ``TV`` here is the unit-cell
total variation; on a mesh of size ``h``, ``N_h = h * TV``.
"""

import math

import numpy as np

from ._accel import check_backend
from .kernels import KERNELS

DEFAULT_MAX_ITER = 50
DEFAULT_TOL = 1e-5


# ------------------------------------------------------------------ grid map


def grid_permutation(n_subdiv):
    """Flat grid index of each mesh triangle (see :mod:`wgeit.kernels`)."""
    n = int(n_subdiv)
    t = np.arange(2 * n * n)
    cell = t // 2
    ci, cj = cell % n, cell // n
    upper = t % 2 == 1
    row = n - 1 - cj
    col = 2 * ci + np.where(upper, 0, 1)
    return row * (2 * n) + col


def to_grid(mesh, values):
    n = mesh.n_subdiv
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n_triangles,):
        raise ValueError(f"expected {mesh.n_triangles} element values, got {values.shape}")
    x = np.empty(2 * n * n)
    x[grid_permutation(n)] = values
    return x.reshape(n, 2 * n)


def from_grid(mesh, x):
    n = mesh.n_subdiv
    x = np.asarray(x, dtype=float)
    if x.shape != (n, 2 * n):
        raise ValueError(f"grid shape {x.shape} does not match mesh ({n}, {2 * n})")
    return x.ravel()[grid_permutation(n)]


# ------------------------------------------------------------------ operators


def _check_dual(p, q):
    m, n1 = q.shape
    if p.shape != (m - 1, n1 + 1) or (n1 + 1) % 2:
        raise ValueError(f"inconsistent dual shapes p{p.shape}, q{q.shape}")


def apply_L(p, q, backend=None):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    _check_dual(p, q)
    return KERNELS[check_backend(backend)]["L"](p, q)


def apply_Lstar(x, backend=None):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] % 2:
        raise ValueError(f"grid must be 2-D with an even number of columns, got {x.shape}")
    return KERNELS[check_backend(backend)]["Lstar"](x)


def project_P(p, q):
    return np.clip(p, -1.0, 1.0), np.clip(q, -1.0, 1.0)


def project_C(x, lam):
    return np.clip(x, lam, 1.0 / lam)


# --------------------------------------------------------------- TV values


def tv_grid(x, h=1.0):
    """``h * ||L* x||_1``, summed with correctly rounded ``math.fsum``."""
    p, q = apply_Lstar(x, backend="numpy")
    return h * math.fsum(np.abs(np.concatenate([p.ravel(), q.ravel()])))


def tv_norm(sigma, mesh):
    """Sum over interior edges of ``|jump| * |e|``."""
    vals = sigma.values if hasattr(sigma, "values") else np.asarray(sigma, dtype=float)
    inner = mesh.interior_edges
    a, b = mesh.edge_tris[inner].T
    return math.fsum(np.abs(vals[a] - vals[b]) * mesh.edge_length[inner])


def dual_objective(p, q, d, beta, lam):
    """h(p, q) = -||H_C(d - beta L(p, q))||^2 + ||d - beta L(p, q)||^2."""
    w = d - beta * apply_L(p, q)
    hc = w - project_C(w, lam)
    return float(-np.sum(hc**2) + np.sum(w**2))


def dual_gradient(p, q, d, beta, lam):
    return tuple(-2.0 * beta * g for g in apply_Lstar(project_C(d - beta * apply_L(p, q), lam)))


def primal_objective(x, d, beta):
    return float(np.sum((x - d) ** 2) + 2.0 * beta * tv_grid(x))


def duality_gap(p, q, d, beta, lam):
    """Primal value at the recovered ``x`` minus the dual value at ``(p, q)``."""
    x = project_C(d - beta * apply_L(p, q), lam)
    dual = float(np.sum((x - d) ** 2) + 2.0 * beta * np.sum(apply_L(p, q) * x))
    return primal_objective(x, d, beta) - dual


def fgp_denoise(d, beta, lam, max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL, backend=None, full_output=False):
    """Solve ``min_{x in [lam, 1/lam]} ||x - d||^2 + 2 beta TV(x)``.

    Stops when the relative change of ``x`` drops below ``tol`` or after
    ``max_iter`` iterations. With ``full_output`` returns ``(x, p, q, iters)``.
    """
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    d = np.asarray(d, dtype=float)
    if d.ndim != 2 or d.shape[1] % 2:
        raise ValueError(f"grid must be 2-D with an even number of columns, got {d.shape}")
    if not np.all(np.isfinite(d)):
        raise ValueError("d must be finite")
    lo, hi = lam, 1.0 / lam
    if beta == 0:
        x = np.clip(d, lo, hi)
        m, n = d.shape
        out = (x, np.zeros((m - 1, n)), np.zeros((m, n - 1)), 0)
    else:
        fgp = KERNELS[check_backend(backend)]["fgp"]
        out = fgp(np.ascontiguousarray(d), float(beta), lo, hi, int(max_iter), float(tol))
    return out if full_output else out[0]
