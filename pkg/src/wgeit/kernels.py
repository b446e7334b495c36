"""Hot loops of the TV proximal map, in numpy and numba flavours.

Grid layout (0-based): an ``m x n`` array, ``n`` even. Row ``i`` is a row of
cells counted from the top; cell ``j`` of that row owns column ``2j`` (the
triangle with the top and left edges) and ``2j + 1`` (the triangle with the
bottom and right edges). Dual variables: ``p`` is ``(m-1, n)`` and lives on
horizontal edges (odd columns only, even columns are identically zero); ``q``
is ``(m, n-1)``, even columns on the diagonals (weight sqrt 2), odd columns on
vertical edges.
"""

import math

import numpy as np

from ._accel import njit

SQRT2 = math.sqrt(2.0)


# --------------------------------------------------------------------- numpy


def lstar_numpy(x):
    m, n = x.shape
    p = np.zeros((m - 1, n))
    q = np.zeros((m, n - 1))
    p[:, 1::2] = x[:-1, 1::2] - x[1:, 0::2]
    q[:, 0::2] = SQRT2 * (x[:, 0::2] - x[:, 1::2])
    q[:, 1::2] = x[:, 1:-1:2] - x[:, 2::2]
    return p, q


def l_numpy(p, q):
    m = q.shape[0]
    n = q.shape[1] + 1
    out = np.zeros((m, n))
    out[:, 0::2] += SQRT2 * q[:, 0::2]
    out[1:, 0::2] -= p[:, 1::2]
    out[:, 2::2] -= q[:, 1::2]
    out[:, 1:-1:2] += q[:, 1::2]
    out[:-1, 1::2] += p[:, 1::2]
    out[:, 1::2] -= SQRT2 * q[:, 0::2]
    return out


def fgp_numpy(d, beta, lo, hi, max_iter, tol):
    """Fast gradient projection on the dual of box-constrained TV denoising.

    Returns ``(x, p, q, iterations)``.
    """
    m, n = d.shape
    p_old = np.zeros((m - 1, n))
    q_old = np.zeros((m, n - 1))
    r, s = p_old.copy(), q_old.copy()
    x_old = np.clip(d, lo, hi)
    p, q, x = p_old, q_old, x_old
    t = 1.0
    step = 1.0 / (8.0 * beta)
    k = 0
    for k in range(1, max_iter + 1):
        y = np.clip(d - beta * l_numpy(r, s), lo, hi)
        gp, gq = lstar_numpy(y)
        p = np.clip(r + step * gp, -1.0, 1.0)
        q = np.clip(s + step * gq, -1.0, 1.0)
        x = np.clip(d - beta * l_numpy(p, q), lo, hi)
        nx = np.linalg.norm(x)
        eps = np.linalg.norm(x - x_old) / nx if nx > 0 else 0.0
        if eps < tol:
            break
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        c = (t - 1.0) / t_new
        r = p + c * (p - p_old)
        s = q + c * (q - q_old)
        p_old, q_old, x_old, t = p, q, x, t_new
    return x, p, q, k


# --------------------------------------------------------------------- numba


@njit
def lstar_numba(x):
    m, n = x.shape
    p = np.zeros((m - 1, n))
    q = np.zeros((m, n - 1))
    for i in range(m):
        for j in range(n // 2):
            a = 2 * j
            q[i, a] = SQRT2 * (x[i, a] - x[i, a + 1])
            if a + 2 < n:
                q[i, a + 1] = x[i, a + 1] - x[i, a + 2]
            if i + 1 < m:
                p[i, a + 1] = x[i, a + 1] - x[i + 1, a]
    return p, q


@njit
def _l_into(p, q, out):
    m, n = out.shape
    for i in range(m):
        for j in range(n // 2):
            a = 2 * j
            v = SQRT2 * q[i, a]
            if i > 0:
                v -= p[i - 1, a + 1]
            if a > 0:
                v -= q[i, a - 1]
            out[i, a] = v
            w = -SQRT2 * q[i, a]
            if a + 2 < n:
                w += q[i, a + 1]
            if i + 1 < m:
                w += p[i, a + 1]
            out[i, a + 1] = w


@njit
def l_numba(p, q):
    m = q.shape[0]
    n = q.shape[1] + 1
    out = np.empty((m, n))
    _l_into(p, q, out)
    return out


@njit
def fgp_numba(d, beta, lo, hi, max_iter, tol):
    m, n = d.shape
    p_old = np.zeros((m - 1, n))
    q_old = np.zeros((m, n - 1))
    r = np.zeros((m - 1, n))
    s = np.zeros((m, n - 1))
    p = np.zeros((m - 1, n))
    q = np.zeros((m, n - 1))
    buf = np.empty((m, n))
    x_old = np.empty((m, n))
    x = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            x_old[i, j] = min(max(d[i, j], lo), hi)
            x[i, j] = x_old[i, j]
    t = 1.0
    step = 1.0 / (8.0 * beta)
    k = 0
    for k in range(1, max_iter + 1):
        _l_into(r, s, buf)
        for i in range(m):
            for j in range(n):
                buf[i, j] = min(max(d[i, j] - beta * buf[i, j], lo), hi)
        gp, gq = lstar_numba(buf)
        for i in range(m - 1):
            for j in range(n):
                p[i, j] = min(max(r[i, j] + step * gp[i, j], -1.0), 1.0)
        for i in range(m):
            for j in range(n - 1):
                q[i, j] = min(max(s[i, j] + step * gq[i, j], -1.0), 1.0)
        _l_into(p, q, buf)
        num = 0.0
        den = 0.0
        for i in range(m):
            for j in range(n):
                v = min(max(d[i, j] - beta * buf[i, j], lo), hi)
                x[i, j] = v
                num += (v - x_old[i, j]) ** 2
                den += v * v
        eps = math.sqrt(num / den) if den > 0 else 0.0
        if eps < tol:
            break
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        c = (t - 1.0) / t_new
        for i in range(m - 1):
            for j in range(n):
                r[i, j] = p[i, j] + c * (p[i, j] - p_old[i, j])
                p_old[i, j] = p[i, j]
        for i in range(m):
            for j in range(n - 1):
                s[i, j] = q[i, j] + c * (q[i, j] - q_old[i, j])
                q_old[i, j] = q[i, j]
        for i in range(m):
            for j in range(n):
                x_old[i, j] = x[i, j]
        t = t_new
    return x.copy(), p.copy(), q.copy(), k


KERNELS = {
    "numpy": {"L": l_numpy, "Lstar": lstar_numpy, "fgp": fgp_numpy},
    "numba": {"L": l_numba, "Lstar": lstar_numba, "fgp": fgp_numba},
}
