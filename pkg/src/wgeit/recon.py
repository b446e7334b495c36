"""End-to-end reconstruction: patterns, synthetic data, noise, multilevel FISTA."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .cem_forward import center, default_electrodes, forward_map
from .fista import fista_minimize
from .gradient import MisfitObjective, fd_slope, fd_sweep
from .mesh import build_uniform_mesh
from .quadrature import triangle_points
from .tv_prox import from_grid, project_C, to_grid

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ currents


def synth_currents(L=16, K=10):
    """Sinusoidal patterns: sin(2 pi k l / L) for k = 1..ceil(K/2), then cosines.

    Each row is re-centered to zero sum and scaled to unit Euclidean norm.
    """
    if K < 1 or K > L - 1:
        raise ValueError(f"K={K} patterns requested; at most L-1={L - 1} are independent")
    l = np.arange(1, L + 1)
    n_sin = math.ceil(K / 2)
    rows = [np.sin(2 * np.pi * k * l / L) for k in range(1, n_sin + 1)]
    rows += [np.cos(2 * np.pi * k * l / L) for k in range(1, K - n_sin + 1)]
    P = center(np.array(rows))
    return P / np.linalg.norm(P, axis=1, keepdims=True)


# --------------------------------------------------------------- true fields


@dataclass(frozen=True)
class TrueField:
    name: str
    sigma: object  # callable (x, y) -> values
    background: float
    description: str = ""


def _squares(boxes, inside=2.0, background=1.0):
    def f(x, y):
        out = np.full(np.broadcast(x, y).shape, background)
        for x0, x1, y0, y1 in boxes:
            out = np.where((x >= x0) & (x <= x1) & (y >= y0) & (y <= y1), inside, out)
        return out

    return f


# Canonical stand-ins for the piecewise-constant examples: axis-aligned squares
# (x0, x1, y0, y1) of conductivity 2 on a unit background. Sides sit on
# multiples of 1/16 so every mesh in use resolves them exactly.
TWO_INCLUSIONS = ((0.125, 0.4375, 0.5625, 0.875), (0.5625, 0.875, 0.125, 0.4375))
FOUR_INCLUSIONS = (
    (0.125, 0.375, 0.125, 0.375),
    (0.625, 0.875, 0.125, 0.375),
    (0.125, 0.375, 0.625, 0.875),
    (0.625, 0.875, 0.625, 0.875),
)

CATALOG = {
    "homogeneous": TrueField("homogeneous", lambda x, y: np.ones(np.broadcast(x, y).shape), 1.0),
    "example2": TrueField(
        "example2", lambda x, y: 0.5 + (2.0 / 3.0) * x + 0.0 * y, 0.5, "linear 0.5 + 2x/3"
    ),
    "example3": TrueField(
        "example3",
        lambda x, y: 1.0 + 0.2 * np.exp(-8.0 * ((x - 0.6) ** 2 + (y - 0.6) ** 2)),
        1.0,
        "Gaussian blob centred at (0.6, 0.6)",
    ),
    "example4a": TrueField(
        "example4a", _squares(TWO_INCLUSIONS), 1.0, "stand-in: two square inclusions, 2 on 1"
    ),
    "example4b": TrueField(
        "example4b", _squares(FOUR_INCLUSIONS), 1.0, "stand-in: four square inclusions, 2 on 1"
    ),
}


def sample_field(fn, mesh):
    """Element values by centroid sampling."""
    c = mesh.centroids
    return np.asarray(fn(c[:, 0], c[:, 1]), dtype=float)


# ---------------------------------------------------------------------- data


@dataclass
class NoisyData:
    voltages: np.ndarray  # (K, L)
    epsilon: float
    seed: int


def generate_data(true_sigma, n_data, patterns, L=16, z=1.0):
    """Voltages of ``true_sigma`` (callable or element array) on a fine mesh."""
    mesh = build_uniform_mesh(n_data)
    el = default_electrodes(mesh, L=L, z=z)
    vals = sample_field(true_sigma, mesh) if callable(true_sigma) else np.asarray(true_sigma, dtype=float)
    return forward_map(mesh, el, vals, patterns)


def add_noise(data, epsilon, seed=0):
    """U^delta_l = U_l + eps * max_j |U_j| * xi_l per row, then re-centred."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if epsilon == 0:
        return NoisyData(data.copy(), 0.0, seed)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(data.shape)
    scale = np.max(np.abs(data), axis=1, keepdims=True)
    return NoisyData(center(data + epsilon * scale * xi), float(epsilon), seed)


# ------------------------------------------------------- nested mesh transfer


def coarse_parent(coarse_mesh, fine_mesh):
    """Index of the coarse triangle containing each fine triangle's centroid."""
    nc, nf = coarse_mesh.n_subdiv, fine_mesh.n_subdiv
    if nf % nc:
        raise ValueError(f"meshes are not nested: {nf} is not a multiple of {nc}")
    H = 1.0 / nc
    c = fine_mesh.centroids
    ci = np.minimum((c[:, 0] / H).astype(np.int64), nc - 1)
    cj = np.minimum((c[:, 1] / H).astype(np.int64), nc - 1)
    lx = c[:, 0] - ci * H
    ly = c[:, 1] - cj * H
    upper = ly > lx
    return 2 * (cj * nc + ci) + upper.astype(np.int64)


def prolong(sigma_coarse, coarse_mesh, fine_mesh):
    return np.asarray(sigma_coarse, dtype=float)[coarse_parent(coarse_mesh, fine_mesh)]


def restrict(sigma_fine, fine_mesh, coarse_mesh):
    """Area-weighted average over the fine triangles of each coarse triangle."""
    parent = coarse_parent(coarse_mesh, fine_mesh)
    num = np.bincount(parent, fine_mesh.area * sigma_fine, coarse_mesh.n_triangles)
    den = np.bincount(parent, fine_mesh.area, coarse_mesh.n_triangles)
    return num / den


# ------------------------------------------------------------------ metrics


def relative_l2_error(sigma, true_fn, mesh, degree=4):
    pts, w, _ = triangle_points(mesh.vertices, mesh.triangles, degree)
    ref = true_fn(pts[..., 0], pts[..., 1])
    err = np.sum(w * (np.asarray(sigma)[:, None] - ref) ** 2)
    return float(np.sqrt(err / np.sum(w * ref**2)))


def top_decile_centroid(sigma, background, mesh):
    """Area-weighted centroid of the 10% of elements with the largest ``sigma - background``."""
    d = np.asarray(sigma) - background
    k = max(1, int(np.ceil(0.1 * len(d))))
    sel = np.argsort(-d, kind="stable")[:k]
    c = mesh.centroids[sel]
    a = mesh.area[sel]
    return (a[:, None] * c).sum(0) / a.sum()


def count_components(mask, mesh):
    """Connected components of the selected triangles (adjacency through shared edges)."""
    mask = np.asarray(mask, dtype=bool)
    inner = mesh.interior_edges
    a, b = mesh.edge_tris[inner].T
    keep = mask[a] & mask[b]
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return 0
    pos = -np.ones(mesh.n_triangles, dtype=np.int64)
    pos[idx] = np.arange(len(idx))
    g = sp.coo_matrix(
        (np.ones(keep.sum()), (pos[a[keep]], pos[b[keep]])), shape=(len(idx), len(idx))
    )
    return connected_components(g, directed=False)[0]


# ------------------------------------------------------------- reconstruction


@dataclass
class Experiment:
    example: str
    alpha: float
    schedule: tuple = (16, 32, 64)
    iters: tuple = (200, 200, 200)
    warm_start: bool = False
    n_data: int = 128
    lam: float = 0.25
    epsilon: float = 0.0
    seed: int = 0
    K: int = 10
    L: int = 16
    z: float = 1.0
    eta: float = 0.5
    L0: float = None  # None: secant estimate at the initial guess
    delta: float = 1e-8
    prox_iter: int = 50
    prox_tol: float = 1e-5

    def __post_init__(self):
        if self.example not in CATALOG:
            raise ValueError(f"unknown example {self.example!r}; choose from {sorted(CATALOG)}")
        self.schedule = tuple(int(n) for n in self.schedule)
        if any(n >= self.n_data for n in self.schedule):
            raise ValueError("data mesh must be strictly finer than every reconstruction mesh")
        self.iters = tuple(int(k) for k in self.iters)
        if len(self.iters) == 1 and len(self.schedule) > 1:
            self.iters = self.iters * len(self.schedule)
        if len(self.iters) != len(self.schedule):
            raise ValueError("iters must have one entry per schedule level")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")

    @property
    def truth(self):
        return CATALOG[self.example]


@dataclass
class LevelResult:
    n_subdiv: int
    sigma: np.ndarray
    rel_l2_err: float
    fista: object


@dataclass
class ReconResult:
    levels: list = field(default_factory=list)
    history: list = field(default_factory=list)  # (level, h, iter, F, rel_l2_err)
    data: NoisyData = None


def secant_curvature(f_grad, x0, lam, rel_step=1e-2):
    """Curvature estimate ``|grad(x1) - grad(x0)| / |x1 - x0|`` along steepest descent."""
    g0 = f_grad(x0)
    gmax = np.max(np.abs(g0))
    if gmax == 0:
        return 1.0
    x1 = project_C(x0 - (rel_step * np.max(np.abs(x0)) / gmax) * g0, lam)
    dx = np.linalg.norm(x1 - x0)
    if dx == 0:
        return 1.0
    return float(np.linalg.norm(f_grad(x1) - g0) / dx)


def reconstruct(exp, data=None, backend=None):
    """Run the level schedule of ``exp``; returns per-level fields and history."""
    truth = exp.truth
    patterns = synth_currents(exp.L, exp.K)
    if data is None:
        clean = generate_data(truth.sigma, exp.n_data, patterns, exp.L, exp.z)
        data = add_noise(clean, exp.epsilon, exp.seed)
    result = ReconResult(data=data)
    prev_mesh, prev_sigma = None, None
    for level, (n, iters) in enumerate(zip(exp.schedule, exp.iters)):
        mesh = build_uniform_mesh(n)
        el = default_electrodes(mesh, L=exp.L, z=exp.z)
        obj = MisfitObjective(mesh, el, patterns, data.voltages)
        if exp.warm_start and prev_sigma is not None:
            sigma0 = prolong(prev_sigma, prev_mesh, mesh)
        else:
            sigma0 = np.full(mesh.n_triangles, truth.background)
        sigma0 = project_C(sigma0, exp.lam)

        def f(x, obj=obj, mesh=mesh):
            return obj.value(from_grid(mesh, x))

        def grad(x, obj=obj, mesh=mesh):
            return to_grid(mesh, obj.gradient(from_grid(mesh, x)))

        x0 = to_grid(mesh, sigma0)
        L0 = exp.L0 if exp.L0 is not None else secant_curvature(grad, x0, exp.lam)

        errs = {0: relative_l2_error(sigma0, truth.sigma, mesh)}

        def record(k, x, F, errs=errs, mesh=mesh):
            errs[k] = relative_l2_error(from_grid(mesh, x), truth.sigma, mesh)

        res = fista_minimize(
            f,
            grad,
            exp.alpha,
            exp.lam,
            x0,
            eta=exp.eta,
            L0=L0,
            max_iter=iters,
            delta=exp.delta,
            tv_scale=mesh.h,
            prox_iter=exp.prox_iter,
            prox_tol=exp.prox_tol,
            backend=backend,
            callback=record,
        )
        for k, F, *_ in res.history:
            result.history.append((level, mesh.h, k, F, errs[k]))
        sigma = from_grid(mesh, res.x)
        err = relative_l2_error(sigma, truth.sigma, mesh)
        log.info("level %d h=1/%d best k=%d F=%.6e rel_err=%.4f", level, n, res.best_k, res.F.min(), err)
        result.levels.append(LevelResult(n, sigma, err, res))
        prev_mesh, prev_sigma = mesh, sigma
    return result


# ------------------------------------------------------------- gradient check

FD_STEPS = (1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6, 1e-6)


@dataclass
class GradientCheck:
    rows: list  # (t, fd_value, analytic_value, rel_err)
    slope: float
    n_fit: int
    componentwise_rel_err: float


def gradient_check(n=8, K=3, seed=0, steps=FD_STEPS, fd_step=1e-5, lo=0.5, hi=2.0):
    """Compare the adjoint gradient with finite differences at a random conductivity.

    Data come from a second random conductivity, so the residual is nonzero.
    ``componentwise_rel_err`` is ``max |g - g_fd| / max |g|`` over all
    elements with central differences of step ``fd_step``.
    """
    rng = np.random.default_rng(seed)
    mesh = build_uniform_mesh(n, strict=False)
    el = default_electrodes(mesh)
    patterns = synth_currents(el.L, K)
    sigma = rng.uniform(lo, hi, mesh.n_triangles)
    data = forward_map(mesh, el, rng.uniform(lo, hi, mesh.n_triangles), patterns)
    obj = MisfitObjective(mesh, el, patterns, data)
    g = obj.gradient(sigma)
    g_fd = np.empty_like(g)
    for i in range(mesh.n_triangles):
        e = np.zeros_like(sigma)
        e[i] = fd_step
        g_fd[i] = (obj.value(sigma + e) - obj.value(sigma - e)) / (2 * fd_step)
    comp = float(np.max(np.abs(g - g_fd)) / np.max(np.abs(g)))
    direction = rng.standard_normal(mesh.n_triangles)
    direction /= np.linalg.norm(direction)
    rows = fd_sweep(obj.value, obj.gradient, sigma, direction, steps)
    slope, used = fd_slope(rows, obj.value(sigma))
    return GradientCheck(rows, slope, used, comp)
