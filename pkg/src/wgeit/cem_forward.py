"""Weak Galerkin discretization of the complete electrode model.

Unknown ordering of the full system: interior P1 coefficients (3 per
triangle, element-major), edge traces (one per edge), then ``L - 1``
coefficients of the electrode voltages in an orthonormal zero-sum basis.

The interior block is element-local and independent of the conductivity, so
it is eliminated triangle by triangle before factorization; interiors are
recovered afterwards. The reduced matrix is ``K(sigma) = G^T diag(sigma |T|) G
+ K_rest`` with ``G`` the weak-gradient operator.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import build_uniform_mesh, electrode_layout
from .quadrature import gauss_segment, triangle_points
from .wg_space import (
    MIDPOINT,
    WgField,
    l2_norm_p1,
    project_Q0,
    stabilizer_weights,
    weak_gradient_matrix,
)

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True, eq=False)
class ElectrodeModel:
    map: object  # ElectrodeMap
    z: np.ndarray  # (L,) contact impedances

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.shape != (self.map.L,):
            raise ValueError(f"expected {self.map.L} contact impedances, got shape {z.shape}")
        if np.any(~np.isfinite(z)) or np.any(z <= 0):
            raise ValueError("contact impedances must be positive and finite")
        object.__setattr__(self, "z", z)

    @property
    def L(self):
        return self.map.L


def default_electrodes(mesh, L=16, elec_len=0.125, z=1.0):
    """Corner-anchored layout with equal contact impedances."""
    emap = electrode_layout(mesh, L, elec_len)
    return ElectrodeModel(emap, np.full(L, float(z)))


@dataclass
class ConductivityField:
    values: np.ndarray
    lam: float = 0.25

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"box bound lambda must lie in (0, 1), got {self.lam}")
        lo, hi = self.lam, 1.0 / self.lam
        if np.any(~np.isfinite(self.values)) or np.any(self.values < lo) or np.any(self.values > hi):
            raise ValueError(f"conductivity values must lie in [{lo:g}, {hi:g}]")


@dataclass
class ForwardSolution:
    u: WgField
    U: np.ndarray


def zero_sum_basis(L):
    """Orthonormal ``(L, L-1)`` basis of the zero-sum subspace."""
    return scipy.linalg.helmert(L).T


def center(v, axis=-1):
    v = np.asarray(v, dtype=float)
    return v - v.mean(axis=axis, keepdims=True)


def check_current(I, L):
    I = np.asarray(I, dtype=float)
    if I.shape[-1] != L:
        raise ValueError(f"current pattern has length {I.shape[-1]}, expected {L}")
    scale = max(1.0, float(np.max(np.abs(I)))) if I.size else 1.0
    if np.any(np.abs(I.sum(axis=-1)) > 1e-10 * scale):
        raise ValueError("current patterns must sum to zero")
    return I


def _sigma_values(mesh, sigma):
    vals = sigma.values if isinstance(sigma, ConductivityField) else np.asarray(sigma, dtype=float)
    if vals.shape != (mesh.n_triangles,):
        raise ValueError(f"sigma has shape {vals.shape}, expected ({mesh.n_triangles},)")
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
        raise ValueError("sigma must be positive and finite")
    return vals


class Discretization:
    """Conductivity-independent pieces of the WG system for one mesh/electrode set."""

    def __init__(self, mesh, electrodes):
        if electrodes.map.edge_assignment.shape != (mesh.n_edges,):
            raise ValueError("electrode map does not belong to this mesh")
        self.mesh = mesh
        self.electrodes = electrodes
        nt, ne, L = mesh.n_triangles, mesh.n_edges, electrodes.L
        self.n0, self.nb, self.nc = 3 * nt, ne, L - 1
        self.B = zero_sum_basis(L)
        self.G = weak_gradient_matrix(mesh)

        # stabilizer: jump_k = MIDPOINT[k] . u0_T - u_b[e_k], weight w_k
        w = stabilizer_weights(mesh)
        self.A00_local = np.einsum("tk,ki,kj->tij", w, MIDPOINT, MIDPOINT)
        self.C_local = -np.einsum("tk,ki->tik", w, MIDPOINT)  # (nt, 3 interior, 3 edges)
        self.w_stab = w
        self.A00_inv = np.linalg.inv(self.A00_local)

        # electrode coupling
        assign = electrodes.map.edge_assignment
        on = np.flatnonzero(assign >= 0)
        wel = mesh.edge_length[on] / electrodes.z[assign[on]]
        Bon = self.B[assign[on]]
        self.el_edges, self.el_weight, self.el_B = on, wel, Bon
        Abb_el = sp.csr_matrix((wel, (on, on)), shape=(ne, ne))
        rows = np.repeat(on, L - 1)
        cols = np.tile(np.arange(L - 1), len(on))
        AbU = sp.csr_matrix(((-(wel[:, None] * Bon)).ravel(), (rows, cols)), shape=(ne, L - 1))
        AUU = sp.csr_matrix(Bon.T @ (wel[:, None] * Bon))
        self.Abb_el, self.AbU, self.AUU = Abb_el, AbU, AUU

        te = mesh.tri_edges
        r = np.repeat(te, 3, axis=1).ravel()
        c = np.tile(te, (1, 3)).ravel()
        # stabilizer edge-edge block and its Schur complement w.r.t. interiors
        diag = np.zeros((nt, 3, 3))
        diag[:, [0, 1, 2], [0, 1, 2]] = w
        schur = diag - np.einsum("tik,tij,tjl->tkl", self.C_local, self.A00_inv, self.C_local)
        self.Abb_stab = sp.csr_matrix((diag.ravel(), (r, c)), shape=(ne, ne))
        self.S_stab = sp.csr_matrix((schur.ravel(), (r, c)), shape=(ne, ne))

        self.K_rest = sp.bmat([[self.S_stab + Abb_el, AbU], [AbU.T, AUU]], format="csr")

    @property
    def size(self):
        return self.n0 + self.nb + self.nc

    def sigma_block(self, sigma_vals):
        d = np.repeat(sigma_vals * self.mesh.area, 2)
        return (self.G.T @ sp.diags(d) @ self.G).tocsr()

    def full_matrix(self, sigma_vals):
        nt = self.mesh.n_triangles
        blk = sp.block_diag(list(self.A00_local), format="csr") if nt else None
        rows = np.repeat(np.arange(3 * nt).reshape(nt, 3), 3, axis=1).ravel()
        cols = np.repeat(self.mesh.tri_edges, 3, axis=0).ravel()
        A0b = sp.csr_matrix((self.C_local.ravel(), (rows, cols)), shape=(3 * nt, self.nb))
        Abb = self.sigma_block(sigma_vals) + self.Abb_stab + self.Abb_el
        Z0c = sp.csr_matrix((3 * nt, self.nc))
        return sp.bmat(
            [[blk, A0b, Z0c], [A0b.T, Abb, self.AbU], [Z0c.T, self.AbU.T, self.AUU]],
            format="csr",
        )

    def reduced_matrix(self, sigma_vals):
        Ks = self.sigma_block(sigma_vals)
        pad = sp.bmat([[Ks, None], [None, sp.csr_matrix((self.nc, self.nc))]], format="csr")
        return (pad + self.K_rest).tocsc()

    def interior_load(self, source, degree=6):
        """``(f, phi_i)_T`` for the P1 vertex basis, ``(nt, 3)``."""
        if source is None:
            return np.zeros((self.mesh.n_triangles, 3))
        if callable(source):
            pts, w, bary = triangle_points(self.mesh.vertices, self.mesh.triangles, degree)
            vals = source(pts[..., 0], pts[..., 1])
            return np.einsum("tq,tq,qk->tk", w, vals, bary)
        load = np.asarray(source, dtype=float)
        if load.shape != (self.mesh.n_triangles, 3):
            raise ValueError(f"element load has shape {load.shape}, expected ({self.mesh.n_triangles}, 3)")
        return load


@lru_cache(maxsize=16)
def discretization(mesh, electrodes):
    return Discretization(mesh, electrodes)


class LinearSystem:
    """Assembled WG-CEM system for a fixed conductivity, with a reusable factorization."""

    def __init__(self, disc, sigma_vals, method="direct"):
        self.disc = disc
        self.mesh = disc.mesh
        self.sigma = sigma_vals
        self.method = method
        self.K = disc.reduced_matrix(sigma_vals)
        self._lu = None
        self._matrix = None
        if method == "direct":
            try:
                self._lu = spla.splu(self.K, permc_spec="MMD_AT_PLUS_A")
            except MemoryError:  # pragma: no cover - depends on machine
                log.warning("factorization ran out of memory; falling back to CG")
                self.method = "cg"
        elif method != "cg":
            raise ValueError(f"unknown solver method {method!r}")

    @property
    def matrix(self):
        """Full symmetric matrix over (interiors, traces, voltage coefficients)."""
        if self._matrix is None:
            self._matrix = self.disc.full_matrix(self.sigma)
        return self._matrix

    @property
    def size(self):
        return self.disc.size

    def _solve_reduced(self, rhs):
        if self._lu is not None:
            return self._lu.solve(rhs)
        diag = self.K.diagonal()
        M = sp.diags(1.0 / diag)
        cols = rhs if rhs.ndim == 2 else rhs[:, None]
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            x, info = spla.cg(self.K, cols[:, j], rtol=1e-12, atol=0.0, M=M, maxiter=20 * len(diag))
            if info != 0:
                res = np.linalg.norm(self.K @ x - cols[:, j]) / max(np.linalg.norm(cols[:, j]), 1e-300)
                raise SolverError(f"CG did not converge (relative residual {res:.3e})", res)
            out[:, j] = x
        return out if rhs.ndim == 2 else out[:, 0]

    def solve_raw(self, b0, bb, bc, check=True):
        """Solve the full system for stacked right-hand sides.

        ``b0`` (nt, 3, k), ``bb`` (ne, k), ``bc`` (L-1, k). Returns the same
        blocks for the solution.
        """
        d = self.disc
        nt = self.mesh.n_triangles
        te = self.mesh.tri_edges
        k = bb.shape[1]
        # eliminate interiors: r_b = b_b - sum_T C_T^T A00_T^{-1} b0_T
        y = np.einsum("tij,tjk->tik", d.A00_inv, b0)
        corr = np.einsum("tik,tin->tkn", d.C_local, y)  # (nt, 3 edges, k)
        rb = bb.copy()
        np.add.at(rb, te.ravel(), -corr.reshape(3 * nt, k))
        rhs = np.vstack([rb, bc])
        x = self._solve_reduced(rhs)
        xb, xc = x[: d.nb], x[d.nb :]
        # recover interiors: u0_T = A00_T^{-1}(b0_T - C_T u_b[T])
        ub_T = xb[te]  # (nt, 3, k)
        x0 = np.einsum("tij,tjk->tik", d.A00_inv, b0 - np.einsum("tik,tkn->tin", d.C_local, ub_T))
        if check:
            self._check_residual(b0, bb, bc, x0, xb, xc)
        return x0, xb, xc

    def _check_residual(self, b0, bb, bc, x0, xb, xc):
        nt = self.mesh.n_triangles
        k = bb.shape[1]
        b = np.vstack([b0.reshape(3 * nt, k), bb, bc])
        x = np.vstack([x0.reshape(3 * nt, k), xb, xc])
        r = self.matrix @ x - b
        bn = np.linalg.norm(b, axis=0)
        rn = np.linalg.norm(r, axis=0)
        scale = np.where(bn > 0, bn, 1.0)
        rel = rn / scale
        # rows with b = 0 must give x = 0; compare against matrix scale instead
        bad = rel > RESIDUAL_TOL * np.where(bn > 0, 1.0, max(1.0, np.abs(self.K).max()))
        if np.any(bad):
            worst = float(rel.max())
            raise SolverError(f"linear solve residual {worst:.3e} exceeds {RESIDUAL_TOL:g}", worst)


def assemble(mesh, electrodes, sigma, method="direct"):
    """Assemble (and factorize) the WG-CEM system for conductivity ``sigma``."""
    vals = _sigma_values(mesh, sigma)
    return LinearSystem(discretization(mesh, electrodes), vals, method=method)


def solve_forward(system, I, source=None, trace_load=None, check=True):
    """Solve ``a_s(sigma, (u, U), (v, V)) = <I, V> [+ (f, v0) + <g, v_b>]``.

    ``I`` may be a single pattern ``(L,)`` or a stack ``(K, L)``; a stack
    returns a list of solutions. ``source`` is an element load: a callable
    ``f(x, y)`` or precomputed ``(nt, 3)`` array. ``trace_load`` adds a
    right-hand side ``(ne,)`` on the traces (manufactured boundary data).
    """
    d = system.disc
    L = d.electrodes.L
    I = check_current(I, L)
    single = I.ndim == 1
    Is = np.atleast_2d(I)
    k = len(Is)
    b0 = np.repeat(d.interior_load(source)[:, :, None], k, axis=2)
    bb = np.zeros((d.nb, k))
    if trace_load is not None:
        bb += np.asarray(trace_load, dtype=float)[:, None]
    bc = d.B.T @ Is.T
    x0, xb, xc = system.solve_raw(b0, bb, bc, check=check)
    U = (d.B @ xc).T
    sols = [ForwardSolution(WgField(x0[:, :, j], xb[:, j]), U[j]) for j in range(k)]
    return sols[0] if single else sols


def forward_map(mesh, electrodes, sigma, patterns, system=None):
    """Electrode voltages ``(K, L)`` for each current pattern; one factorization."""
    if system is None:
        system = assemble(mesh, electrodes, sigma)
    patterns = np.atleast_2d(np.asarray(patterns, dtype=float))
    return np.array([s.U for s in solve_forward(system, patterns)])


# ---------------------------------------------------------------------------
# manufactured solutions


@dataclass
class Manufactured:
    """Exact potential with constant conductivity and its CEM data."""

    u: object
    grad: object
    source: object  # f = -div(sigma grad u)
    sigma: float = 1.0


def _bump_parts(x, y):
    X, Y = x - 0.5, y - 0.5
    r2 = X**2 + Y**2
    s = 0.25 - r2
    inside = s > 0
    ss = np.where(inside, s, 1.0)
    u = np.where(inside, np.exp(-1.0 / ss), 0.0)
    return X, Y, r2, ss, u


def bump(x, y):
    return _bump_parts(x, y)[4]


def bump_grad(x, y):
    X, Y, _, s, u = _bump_parts(x, y)
    g = -2.0 * u / s**2
    return g * X, g * Y


def bump_laplacian(x, y):
    _, _, r2, s, u = _bump_parts(x, y)
    return u * (4.0 * r2 / s**4 - 4.0 / s**2 - 8.0 * r2 / s**3)


BUMP = Manufactured(bump, bump_grad, lambda x, y: -bump_laplacian(x, y), 1.0)


def manufactured_data(disc, problem, U_exact=None, npts=3):
    """Boundary data for a manufactured potential, setting exact voltages ``U``.

    Returns ``(I, trace_load)``. With ``flux = sigma du/dn`` the loads are
    ``<flux, v_b>`` on gaps and ``z^{-1}<u + z flux - U_l, v_b>`` on electrode
    ``l``; ``I_l = int_{e_l} flux`` projected onto the zero-sum space. The load
    vanishes for potentials whose value and gradient vanish on the boundary.
    """
    mesh, el = disc.mesh, disc.electrodes
    L = el.L
    U = np.zeros(L) if U_exact is None else center(U_exact)
    s, w = gauss_segment(npts)
    bnd = np.flatnonzero(mesh.boundary)
    a = mesh.vertices[mesh.edges[bnd, 0]]
    b = mesh.vertices[mesh.edges[bnd, 1]]
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    t = mesh.edge_tris[bnd, 0]
    k = np.argmax(mesh.tri_edges[t] == bnd[:, None], axis=1)
    n = mesh.tri_normals[t, k]
    gx, gy = problem.grad(pts[..., 0], pts[..., 1])
    flux = problem.sigma * (gx * n[:, 0:1] + gy * n[:, 1:2])
    uval = problem.u(pts[..., 0], pts[..., 1])
    le = mesh.edge_length[bnd]
    flux_int = le * (flux @ w)
    assign = el.map.edge_assignment[bnd]
    load = np.zeros(mesh.n_edges)
    I = np.zeros(L)
    gap = assign < 0
    load[bnd[gap]] = flux_int[gap]
    on = ~gap
    z = el.z[assign[on]]
    g_r = uval[on] + z[:, None] * flux[on] - U[assign[on]][:, None]
    load[bnd[on]] = le[on] * (g_r @ w) / z
    np.add.at(I, assign[on], flux_int[on])
    # the electrode rows also receive -z^{-1}<g_r, V_l>
    corr = np.zeros(L)
    np.add.at(corr, assign[on], le[on] * (g_r @ w) / z)
    return center(I - corr), load, U


def convergence_study(problem, n_list, electrodes_for=default_electrodes, U_exact=None, degree=6):
    """Errors of the WG solution against a manufactured potential.

    Returns rows ``(h, err_u, order_u, err_U, order_U)`` with
    ``err_u = ||u0 - Q0 u||_L2`` and ``err_U = ||U_h - U||``; orders are log2
    ratios between consecutive rows (``nan`` for the first).
    """
    rows = []
    prev = None
    for n in n_list:
        mesh = build_uniform_mesh(n)
        el = electrodes_for(mesh)
        disc = discretization(mesh, el)
        I, load, U = manufactured_data(disc, problem, U_exact)
        sigma = np.full(mesh.n_triangles, problem.sigma)
        system = LinearSystem(disc, sigma)
        sol = solve_forward(system, I, source=problem.source, trace_load=load)
        q0 = project_Q0(problem.u, mesh, degree)
        err_u = l2_norm_p1(mesh, sol.u.interior - q0)
        err_U = float(np.linalg.norm(sol.U - U))
        h = 1.0 / n
        if prev is None:
            ou = oU = float("nan")
        else:
            ratio = prev[0] / h
            ou = np.log(prev[1] / err_u) / np.log(ratio) if err_u > 0 else float("nan")
            oU = np.log(prev[2] / err_U) / np.log(ratio) if err_U > 0 else float("nan")
        rows.append((h, err_u, ou, err_U, oU))
        prev = (h, err_u, err_U)
        log.info("h=1/%d err_u=%.4e err_U=%.4e", n, err_u, err_U)
    return rows
