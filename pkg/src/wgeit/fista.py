"""FISTA with backtracking for ``F = f + alpha * tv_scale * TV`` over a box."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .tv_prox import DEFAULT_MAX_ITER, DEFAULT_TOL, fgp_denoise, project_C, tv_grid

log = logging.getLogger(__name__)

MAX_BACKTRACKS = 60


class BacktrackingError(RuntimeError):
    pass


@dataclass
class FistaResult:
    x: np.ndarray  # best iterate
    best_k: int
    history: list = field(default_factory=list)  # (k, F, f, g, L_k, backtracks)
    certificates: list = field(default_factory=list)  # (F(x_k), Q_{L_k}(x_k, y_k))
    momentum: list = field(default_factory=list)  # t_1, t_2, ...
    x_last: np.ndarray = None

    @property
    def F(self):
        return np.array([row[1] for row in self.history])


def quadratic_model(x, y, L, f_y, grad_y, g_x):
    """Q_L(x, y) = f(y) + <x - y, grad f(y)> + L/2 ||x - y||^2 + g(x)."""
    if L <= 0:
        raise ValueError(f"L must be positive, got {L}")
    dx = x - y
    return float(f_y + np.sum(dx * grad_y) + 0.5 * L * np.sum(dx * dx) + g_x)


def prox_step(y, L, grad_y, alpha, lam, tv_scale=1.0, prox_iter=DEFAULT_MAX_ITER, prox_tol=DEFAULT_TOL, backend=None):
    """argmin over the box of Q_L(., y): TV denoising of ``y - grad/L``."""
    if L <= 0:
        raise ValueError(f"L must be positive, got {L}")
    d = y - grad_y / L
    return fgp_denoise(d, alpha * tv_scale / L, lam, prox_iter, prox_tol, backend=backend)


def next_momentum(t):
    return 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))


def fista_minimize(
    f_eval,
    grad_eval,
    alpha,
    lam,
    x0,
    eta=0.5,
    L0=1.0,
    max_iter=200,
    delta=1e-8,
    tv_scale=1.0,
    prox_iter=DEFAULT_MAX_ITER,
    prox_tol=DEFAULT_TOL,
    backend=None,
    callback=None,
):
    """Minimize ``f(x) + alpha * tv_scale * TV(x)`` over ``[lam, 1/lam]``.

    Backtracking grows the curvature estimate by ``1/eta`` until
    ``F(x) <= Q_L(x, y)``; the estimate is never decreased. The extrapolated
    point is projected onto the box so ``f`` is only evaluated at admissible
    conductivities. Returns the iterate with the smallest ``F`` (``x0``
    included, as ``k = 0``); among equal values the latest one wins.
    """
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    if L0 <= 0:
        raise ValueError(f"L0 must be positive, got {L0}")
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 < lam) or np.any(x0 > 1.0 / lam):
        raise ValueError("x0 must lie in the box [lam, 1/lam]")

    def g_eval(x):
        return alpha * tv_scale * tv_grid(x) if alpha else 0.0

    f0 = f_eval(x0)
    g0 = g_eval(x0)
    res = FistaResult(x=x0.copy(), best_k=0, momentum=[1.0])
    res.history.append((0, f0 + g0, f0, g0, L0, 0))
    best = f0 + g0
    x_prev = x0.copy()
    y = x0.copy()
    t = 1.0
    Lk = float(L0)
    x = x0
    for k in range(1, max_iter + 1):
        f_y = f_eval(y)
        grad_y = grad_eval(y)
        backtracks = 0
        while True:
            x = prox_step(y, Lk, grad_y, alpha, lam, tv_scale, prox_iter, prox_tol, backend)
            f_x = f_eval(x)
            g_x = g_eval(x)
            F_x = f_x + g_x
            Q = quadratic_model(x, y, Lk, f_y, grad_y, g_x)
            if F_x <= Q:
                break
            backtracks += 1
            if backtracks > MAX_BACKTRACKS:
                raise BacktrackingError(
                    f"no sufficient decrease after {MAX_BACKTRACKS} backtracks at iteration {k} "
                    f"(L={Lk:.3e}, F={F_x:.6e}, Q={Q:.6e})"
                )
            Lk /= eta
        res.certificates.append((F_x, Q))
        res.history.append((k, F_x, f_x, g_x, Lk, backtracks))
        log.info("%d,%.10e,%.10e,%.10e,%.6e,%d", k, F_x, f_x, g_x, Lk, backtracks)
        if F_x <= best:  # ties go to the later iterate
            best = F_x
            res.x, res.best_k = x.copy(), k
        if callback is not None:
            callback(k, x, F_x)
        t_new = next_momentum(t)
        y_new = project_C(x + ((t - 1.0) / t_new) * (x - x_prev), lam)
        res.momentum.append(t_new)
        x_prev, t = x, t_new
        if np.linalg.norm(y_new - y) < delta:
            break
        y = y_new
    res.x_last = x
    return res
