import numpy as np
import pytest

from wgeit.cem_forward import assemble, center, default_electrodes, discretization, forward_map, solve_forward
from wgeit.gradient import MisfitObjective, fd_slope, fd_sweep, misfit, misfit_gradient, solve_adjoint
from wgeit.mesh import build_uniform_mesh
from wgeit.recon import gradient_check, synth_currents


@pytest.fixture(scope="module")
def problem():
    rng = np.random.default_rng(7)
    m = build_uniform_mesh(8)
    el = default_electrodes(m)
    P = synth_currents(16, 3)
    data = forward_map(m, el, rng.uniform(0.5, 2, m.n_triangles), P)
    sigma = rng.uniform(0.5, 2, m.n_triangles)
    return m, el, P, data, sigma


def test_zero_residual_gives_zero_adjoint(problem):
    m, el, _, _, sigma = problem
    a = solve_adjoint(assemble(m, el, sigma), np.zeros(16))
    assert np.abs(a.Z).max() == 0 and np.abs(a.z.traces).max() == 0


def test_adjoint_linear_and_self_adjoint(problem, rng):
    m, el, _, _, sigma = problem
    s = assemble(m, el, sigma)
    r = center(rng.standard_normal(16))
    a1, a2 = solve_adjoint(s, r), solve_adjoint(s, 2 * r)
    assert np.allclose(a2.Z, 2 * a1.Z, atol=1e-14)
    I = center(rng.standard_normal(16))
    U = solve_forward(s, I).U
    assert abs(U @ r - a1.Z @ I) < 1e-10


def test_adjoint_centers_residual(problem, rng):
    m, el, _, _, sigma = problem
    s = assemble(m, el, sigma)
    r = rng.standard_normal(16)
    assert np.allclose(solve_adjoint(s, r).Z, solve_adjoint(s, center(r)).Z)


def test_exact_data_zero_gradient(problem):
    m, el, P, _, sigma = problem
    obj = MisfitObjective(m, el, P, forward_map(m, el, sigma, P))
    assert obj.value(sigma) < 1e-28
    assert np.abs(obj.gradient(sigma)).max() < 1e-14


def test_length_mismatch(problem):
    m, el, P, data, sigma = problem
    s = assemble(m, el, sigma)
    fw = solve_forward(s, P)
    with pytest.raises(ValueError, match="adjoint"):
        misfit_gradient(m, sigma, fw, fw[:1])


def test_data_shape_checked(problem):
    m, el, P, data, _ = problem
    with pytest.raises(ValueError, match="does not match"):
        MisfitObjective(m, el, P, data[:2])


def test_componentwise_finite_differences(problem):
    m, el, P, data, sigma = problem
    obj = MisfitObjective(m, el, P, data)
    g = obj.gradient(sigma)
    h = 1e-5
    idx = np.arange(0, m.n_triangles, 7)
    fd = []
    for i in idx:
        e = np.zeros_like(sigma)
        e[i] = h
        fd.append((obj.value(sigma + e) - obj.value(sigma - e)) / (2 * h))
    assert np.max(np.abs(g[idx] - fd)) / np.max(np.abs(g)) < 1e-4


def test_dense_perturbation_oracle():
    # sigma constant, one pattern: dU/dsigma_T = -A^{-1} (dA/dsigma_T) x on the full system
    m = build_uniform_mesh(8)
    el = default_electrodes(m)
    d = discretization(m, el)
    sigma = np.full(m.n_triangles, 1.3)
    I = synth_currents(16, 1)
    data = center(np.linspace(-1, 1, 16))[None]
    s = assemble(m, el, sigma)
    fw = solve_forward(s, I)
    U = np.array([f.U for f in fw])
    g = misfit_gradient(m, sigma, fw, solve_adjoint(s, U - data))
    A = s.matrix.toarray()
    A0 = d.full_matrix(np.zeros_like(sigma)).toarray()
    n0 = 3 * m.n_triangles + m.n_edges
    rhs = np.zeros(len(A))
    rhs[n0:] = d.B.T @ I[0]
    x = np.linalg.solve(A, rhs)
    for t in (0, 17, 101):
        e = np.zeros_like(sigma)
        e[t] = 1.0
        dA = d.full_matrix(e).toarray() - A0
        dx = -np.linalg.solve(A, dA @ x)
        dU = d.B @ dx[n0:]
        ref = 2 * (U[0] - data[0]) @ dU
        assert abs(g[t] - ref) < 1e-10 * max(1.0, abs(ref))


def test_residual_scaling(problem):
    m, el, P, data, sigma = problem
    s = assemble(m, el, sigma)
    fw = solve_forward(s, P)
    U = np.array([f.U for f in fw])
    g1 = misfit_gradient(m, sigma, fw, solve_adjoint(s, U - data))
    g3 = misfit_gradient(m, sigma, fw, solve_adjoint(s, 3 * (U - data)))
    assert np.allclose(g3, 3 * g1, rtol=1e-12, atol=1e-16)


def test_misfit_and_cache(problem):
    m, el, P, data, sigma = problem
    obj = MisfitObjective(m, el, P, data)
    v = obj(sigma)
    obj.gradient(sigma)
    assert obj.n_solves == 1
    assert np.isclose(v, misfit(forward_map(m, el, sigma, P), data))


def test_fd_sweep_quadratic():
    c = np.array([1.0, -2.0])
    f = lambda x: float(x @ x + (x @ c) ** 3)
    g = lambda x: 2 * x + 3 * (x @ c) ** 2 * c
    rows = fd_sweep(f, g, np.array([0.3, 0.1]), np.array([0.6, 0.8]), [1e-1, 1e-2, 1e-3])
    slope, used = fd_slope(rows, 1.0)
    assert used == 3 and abs(slope - 2) < 0.05


def test_gradient_check_slope():
    chk = gradient_check(n=8, K=3, seed=1)
    assert chk.componentwise_rel_err < 1e-4
    assert abs(chk.slope - 2) < 0.2 and chk.n_fit >= 3
