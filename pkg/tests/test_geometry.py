import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surfgbpm.cls_fit import StencilConfig, fit_weighted_quadratic
from surfgbpm.geometry import (MongeJet, build_local_frame, frame_matrices, fundamental_form,
                               laplace_beltrami_point, mean_curvature, patch_normal_local,
                               surface_divergence, surface_gradient)
from surfgbpm.operators import assemble

finite = st.floats(-3, 3, allow_nan=False)


def test_frame_canonical():
    f = build_local_frame((0, 0, 0), (0, 0, 1))
    assert np.array_equal(f.t1, [1.0, 0.0, 0.0])
    assert np.array_equal(f.t2, [0.0, 1.0, 0.0])


def test_frame_x_normal():
    f = build_local_frame((1, 2, 3), (1, 0, 0))
    assert np.allclose(np.cross(f.t1, f.t2), [1, 0, 0], atol=1e-15)
    assert abs(f.t1 @ f.t2) < 1e-15


@pytest.mark.parametrize("n", [(0, 0, -1), (0, 0, -1 + 1e-12)])
def test_frame_branch_axis(n):
    n = np.asarray(n, dtype=float) / np.linalg.norm(n)
    R = frame_matrices(n[None])[0]
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.allclose(np.cross(R[0], R[1]), R[2], atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.tuples(finite, finite, finite).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_frame_orthonormal(v):
    n = np.asarray(v) / np.linalg.norm(v)
    f = build_local_frame((0, 0, 0), n)
    R = f.matrix
    assert np.abs(R @ R.T - np.eye(3)).max() <= 1e-12
    assert np.abs(np.cross(f.t1, f.t2) - n).max() <= 1e-12
    assert np.abs(f.n - n).max() <= 1e-15


def test_frame_errors():
    with pytest.raises(ValueError):
        build_local_frame((0, 0, 0), (0, 0, 0))
    with pytest.raises(ValueError):
        build_local_frame((0, 0, 0), (0, 0, 2))


def test_frame_round_trip(rng):
    n = rng.normal(size=3)
    f = build_local_frame(rng.normal(size=3), n / np.linalg.norm(n))
    p = rng.normal(size=(10, 3))
    assert np.allclose(f.to_world(f.to_local(p)), p, atol=1e-14)


@pytest.mark.parametrize("hx,hy,E,F,G,W2", [(0, 0, 1, 0, 1, 1), (1, 0, 2, 0, 1, 2),
                                           (1, 2, 2, 2, 5, 6)])
def test_fundamental_form(hx, hy, E, F, G, W2):
    ff = fundamental_form(MongeJet(hx, hy, 0, 0, 0))
    assert (ff.E, ff.F, ff.G, ff.W2) == (E, F, G, W2)


def test_surface_gradient_trivial():
    f = build_local_frame((0, 0, 0), (0, 0, 1))
    flat = MongeJet(0, 0, 0, 0, 0)
    assert np.array_equal(surface_gradient(flat, 1.0, 0.0, f), f.t1)
    assert np.array_equal(surface_gradient(flat, 0.0, 0.0, f), np.zeros(3))


@settings(max_examples=200, deadline=None)
@given(finite, finite, finite, finite, finite, finite, finite)
def test_surface_gradient_tangent(hx, hy, hxx, hxy, hyy, xx, xy):
    j = MongeJet(hx, hy, hxx, hxy, hyy)
    f = build_local_frame((0, 0, 0), (0, 0, 1))
    g = surface_gradient(j, xx, xy, f)
    n = patch_normal_local(hx, hy)
    assert abs(g @ n) <= 1e-12 * max(1.0, np.linalg.norm(g))


def test_surface_gradient_sphere_z():
    # unit sphere at a generic point: grad z = e_z - z n
    p = np.array([0.3, -0.5, 0.0])
    p[2] = np.sqrt(1 - p @ p)
    f = build_local_frame(p, p)
    # local height of the sphere and of xi = z
    hx = hy = 0.0
    j = MongeJet(hx, hy, -1.0, 0.0, -1.0)
    # xi(x, y) = z-coordinate of p + x t1 + y t2 + h n  -> derivatives at 0
    xi_x, xi_y = f.t1[2], f.t2[2]
    g = surface_gradient(j, xi_x, xi_y, f)
    assert np.allclose(g, np.array([0, 0, 1.0]) - p[2] * p, atol=1e-14)


def test_laplace_beltrami_point():
    flat = MongeJet(0, 0, 0, 0, 0)
    assert laplace_beltrami_point(flat, 0, 0, 0, 0, 0) == 0
    assert laplace_beltrami_point(flat, 0, 0, 1, 0, 1) == 2
    assert laplace_beltrami_point(flat, 5, -3, 1, 7, 1) == 2
    j = MongeJet(0.3, -0.2, 1.0, 0.5, -2.0)
    assert laplace_beltrami_point(j, 0, 0, 0, 0, 0) == 0


def test_mean_curvature_closed_forms():
    assert mean_curvature(0, 0, 0, 0, 0) == 0
    # outward-normal graph of the unit sphere: h = sqrt(1 - r^2) - 1
    assert mean_curvature(0, 0, -1, 0, -1) == 2
    R = 0.4
    assert np.isclose(mean_curvature(0, 0, -1 / R, 0, 0), 1 / R)


@pytest.mark.parametrize("h", [0.1, 0.05, 0.025])
def test_mean_curvature_fitted(h, rng):
    # sphere and cylinder sampled at spacing h around the north pole
    g = np.arange(-2, 3) * h
    x, y = np.meshgrid(g, g)
    x, y = x.ravel(), y.ravel()
    keep = (x != 0) | (y != 0)
    x, y = x[keep], y[keep]
    sph = np.stack([x, y, np.sqrt(1 - x * x - y * y) - 1], axis=1)
    a = fit_weighted_quadratic(sph)
    j = MongeJet.from_coefficients(a)
    assert abs(mean_curvature(j.h_x, j.h_y, j.h_xx, j.h_xy, j.h_yy) - 2) <= 5 * h * h
    R = 0.5
    cyl = np.stack([x, y, np.sqrt(R * R - x * x) - R], axis=1)
    j = MongeJet.from_coefficients(fit_weighted_quadratic(cyl))
    assert abs(mean_curvature(j.h_x, j.h_y, j.h_xx, j.h_xy, j.h_yy) - 1 / R) <= 10 * h * h


@pytest.fixture(scope="module")
def sphere_ops():
    from surfgbpm.surfaces import Sphere
    from surfgbpm.tube_grid import GridSpec, initialize_tube

    out = {}
    for dx in (0.2, 0.1):
        g = GridSpec.from_bounds((-1.6,) * 3, (1.6,) * 3, dx)
        t = initialize_tube(Sphere((0, 0, 0), 1.0), g, 1.5)
        out[dx] = (t, assemble(t, StencilConfig()))
    return out


def test_divergence_constant_field(sphere_ops):
    t, ops = sphere_ops[0.1]
    v = np.tile([0.3, -1.0, 2.0], (t.n, 1))
    assert np.abs(surface_divergence(ops, v)).max() < 1e-9


@pytest.mark.parametrize("dx", [0.2, 0.1])
def test_divergence_identity_and_normal(sphere_ops, dx):
    t, ops = sphere_ops[dx]
    assert np.abs(surface_divergence(ops, t.pos) - 2).max() <= dx
    V = 0.7
    assert np.abs(surface_divergence(ops, V * t.nrm) - 2 * V).max() <= dx
    # the normal-law identity used by the solver: div(V n) = kappa V
    assert np.abs(ops.kappa * V - 2 * V).max() <= dx
