import numpy as np
import pytest

from wgeit.quadrature import gauss_segment, triangle_points, triangle_rule


@pytest.mark.parametrize("npts", [1, 2, 3, 5])
def test_segment_exactness(npts):
    s, w = gauss_segment(npts)
    for p in range(2 * npts):
        assert np.isclose(w @ s**p, 1.0 / (p + 1), atol=1e-15)


@pytest.mark.parametrize("degree", [1, 2, 4, 6])
def test_triangle_exactness(degree):
    bary, w = triangle_rule(degree)
    x, y = bary[:, 1], bary[:, 2]
    from math import factorial

    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            assert np.isclose(w @ (x**a * y**b), exact, rtol=1e-13, atol=1e-16)


def test_physical_weights_sum_to_area():
    v = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    pts, w, _ = triangle_points(v, np.array([[0, 1, 2]]), 4)
    assert np.isclose(w.sum(), 1.0)
    assert np.isclose((w * pts[..., 0]).sum(), 2.0 / 3.0)
