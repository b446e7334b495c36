import math

import numpy as np
import pytest

from wgeit.fista import BacktrackingError, fista_minimize, next_momentum, prox_step, quadratic_model
from wgeit.tv_prox import tv_grid

SQ2 = math.sqrt(2.0)


def quad(c):
    return (lambda x: float(np.sum((x - c) ** 2))), (lambda x: 2.0 * (x - c))


def test_quadratic_model_basics(rng):
    x, y, g = rng.standard_normal((3, 2, 4))
    assert quadratic_model(y, y, 3.0, 1.5, g, 0.25) == pytest.approx(1.75)
    # f = ||x - c||^2 has curvature 2: Q_2 reproduces f exactly
    c = rng.standard_normal((2, 4))
    f, grad = quad(c)
    assert quadratic_model(x, y, 2.0, f(y), grad(y), 0.0) == pytest.approx(f(x))
    assert quadratic_model(x, y, 5.0, 0, g, 0) > quadratic_model(x, y, 1.0, 0, g, 0)
    with pytest.raises(ValueError):
        quadratic_model(x, y, 0.0, 0, g, 0)


def test_prox_step_projection_and_fixed_point(rng):
    y = rng.uniform(0.5, 2, (2, 4))
    g = rng.standard_normal((2, 4))
    assert np.array_equal(prox_step(y, 2.0, g, 0.0, 0.25), np.clip(y - g / 2.0, 0.25, 4))
    assert np.array_equal(prox_step(y, 2.0, np.zeros_like(y), 0.0, 0.25), y)


def test_prox_step_one_cell_grid_search():
    y = np.array([[1.0, 1.3]])
    g = np.array([[0.2, -0.4]])
    L, alpha, lam = 2.0, 0.1, 0.5
    x = prox_step(y, L, g, alpha, lam, prox_iter=5000, prox_tol=0)
    grid = np.linspace(lam, 1 / lam, 1501)
    X1, X2 = np.meshgrid(grid, grid, indexing="ij")
    Q = g[0, 0] * (X1 - y[0, 0]) + g[0, 1] * (X2 - y[0, 1])
    Q += L / 2 * ((X1 - y[0, 0]) ** 2 + (X2 - y[0, 1]) ** 2) + alpha * SQ2 * np.abs(X1 - X2)
    i, j = np.unravel_index(np.argmin(Q), Q.shape)
    assert abs(x[0, 0] - grid[i]) < 2e-3 and abs(x[0, 1] - grid[j]) < 2e-3


def test_projection_toy_converges():
    c = np.random.default_rng(0).uniform(0.5, 2, (4, 4))
    f, grad = quad(c)
    r = fista_minimize(f, grad, 0.0, 0.25, np.ones((4, 4)), max_iter=100)
    assert np.abs(r.x - c).max() <= 1e-10
    assert r.F.min() <= 1e-10
    assert all(F <= Q for F, Q in r.certificates)


def test_momentum_identity():
    c = np.full((2, 4), 3.0)
    f, grad = quad(c)
    r = fista_minimize(f, grad, 0.01, 0.25, np.ones((2, 4)), max_iter=30, delta=0)
    t = np.array(r.momentum)
    assert t[0] == 1.0
    assert np.abs(t[1:] * (t[1:] - 1) - t[:-1] ** 2).max() < 1e-12
    assert next_momentum(1.0) == pytest.approx((1 + math.sqrt(5)) / 2)


def test_best_envelope_and_certificates(rng):
    c = rng.uniform(0.1, 5, (4, 8))  # partly outside the box
    f, grad = quad(c)
    r = fista_minimize(f, grad, 0.05, 0.25, np.ones((4, 8)), L0=0.1, max_iter=80, delta=0)
    env = np.minimum.accumulate(r.F)
    assert np.all(np.diff(env) <= 0)
    assert r.F[r.best_k] == env[-1]
    assert all(F <= Q for F, Q in r.certificates)
    assert any(row[5] > 0 for row in r.history)  # backtracking happened from L0 = 0.1
    Ls = [row[4] for row in r.history]
    assert all(b >= a for a, b in zip(Ls, Ls[1:]))
    assert r.x.min() >= 0.25 and r.x.max() <= 4


def test_large_alpha_gives_constant():
    c = np.random.default_rng(3).uniform(0.5, 2, (4, 8))
    f, grad = quad(c)
    r = fista_minimize(f, grad, 100.0, 0.25, np.ones((4, 8)), max_iter=200, prox_iter=5000, prox_tol=1e-14)
    assert tv_grid(r.x) <= 1e-8
    assert np.allclose(r.x, np.clip(c.mean(), 0.25, 4), atol=1e-9)


def test_stops_on_delta():
    c = np.full((2, 2), 1.0)
    f, grad = quad(c)
    r = fista_minimize(f, grad, 0.0, 0.25, np.ones((2, 2)), max_iter=50)
    assert len(r.history) == 2  # one step, y stops moving


def test_argument_checks():
    f, grad = quad(np.ones((2, 2)))
    x0 = np.ones((2, 2))
    with pytest.raises(ValueError):
        fista_minimize(f, grad, 0.0, 0.25, x0, eta=1.5)
    with pytest.raises(ValueError):
        fista_minimize(f, grad, 0.0, 0.25, x0, L0=0)
    with pytest.raises(ValueError):
        fista_minimize(f, grad, 0.0, 0.25, np.full((2, 2), 10.0))


def test_backtracking_abort():
    # a wildly wrong gradient keeps the trial point pinned at the box edge
    f = lambda x: float(np.sum(x))
    grad = lambda x: np.full_like(x, -1e300)
    with pytest.raises(BacktrackingError, match="backtracks"):
        fista_minimize(f, grad, 0.0, 0.25, np.ones((2, 2)), max_iter=5)
