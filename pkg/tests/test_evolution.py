import logging

import numpy as np
import pytest

from surfgbpm import kernels
from surfgbpm.cls_fit import StencilConfig
from surfgbpm.errors import OutOfDomainError
from surfgbpm.evolution import (RegridStats, VelocityLaw, move_footpoints, regrid, rk4,
                                transfer_values)
from surfgbpm.scenarios import VORTEX_CENTER, VORTEX_RADIUS, vortex_field
from surfgbpm.surfaces import Sphere
from surfgbpm.tube_grid import GridSpec, initialize_tube

CFG = StencilConfig()


def const_field(v):
    v = np.asarray(v, dtype=float)
    return lambda x, t: np.broadcast_to(v, x.shape).copy()


def test_velocity_law_validation():
    with pytest.raises(ValueError):
        VelocityLaw("spiral")
    with pytest.raises(ValueError):
        VelocityLaw("ambient")
    law = VelocityLaw("normal", alpha=0.1, beta=5.0, start_time=2.0)
    assert not law.moving(1.0) and law.moving(2.0)
    assert not VelocityLaw("static").moving(10.0)
    kap, vals = np.array([2.0]), np.array([[0.5]])
    assert law.normal_speed(kap, vals)[0] == pytest.approx(0.1 * 2 + 5 * 0.5)
    v = law.velocity(np.zeros((1, 3)), 3.0, nrm=np.array([[0, 0, 1.0]]), kappa=kap, vals=vals)
    assert np.allclose(v, [[0, 0, 2.7]])


def test_rk4_exact_for_constant_field(sphere_tube):
    t = sphere_tube(0.2)
    law = VelocityLaw("ambient", field=const_field([1.0, 1.0, 0.0]))
    new = move_footpoints(t, law, 0.0, 0.01)
    assert np.abs(new - t.pos - [0.01, 0.01, 0.0]).max() <= 1e-15


def test_rk4_order():
    # dx/dt = x: exact exp(dt)
    f = lambda x, t: x  # noqa: E731
    err = [abs(rk4(f, np.array([1.0]), 0.0, h)[0] - np.exp(h)) for h in (0.1, 0.05)]
    assert np.log2(err[0] / err[1]) > 4.8


def test_vortex_field_vanishes_at_half_time(rng):
    T = 1.5
    v = vortex_field(T)
    x = rng.uniform(0, 1, size=(100, 3))
    # cos(pi/2) is 6e-17 in floating point
    assert np.abs(v(x, T / 2)).max() <= 1e-15
    # divergence free: check by central differences
    h = 1e-5
    div = sum((v(x + h * np.eye(3)[k], 0.3)[:, k] - v(x - h * np.eye(3)[k], 0.3)[:, k]) / (2 * h)
              for k in range(3))
    assert np.abs(div).max() < 1e-6


def test_normal_law_is_euler(sphere_tube):
    t = sphere_tube(0.2)
    t.vals[:] = 0.5
    law = VelocityLaw("normal", alpha=0.1, beta=2.0)
    kappa = np.full(t.n, 2.0)
    new = move_footpoints(t, law, 0.0, 0.01, kappa=kappa)
    assert np.allclose(new, t.pos + 0.01 * (0.2 + 1.0) * t.nrm, atol=1e-15)
    with pytest.raises(ValueError):
        move_footpoints(t, law, 0.0, 0.01)


def test_static_law_does_not_move(sphere_tube):
    t = sphere_tube(0.2)
    assert np.array_equal(move_footpoints(t, VelocityLaw("static"), 0.0, 1.0), t.pos)


def test_leaving_domain(sphere_tube):
    t = sphere_tube(0.2)
    law = VelocityLaw("ambient", field=const_field([10.0, 0.0, 0.0]))
    with pytest.raises(OutOfDomainError):
        move_footpoints(t, law, 0.0, 0.1)


def test_regrid_static_sphere_fixed_point(sphere_tube):
    t = sphere_tube(0.1)
    x, y = t.pos[:, 0], t.pos[:, 1]
    t.vals = (x * y)[:, None]
    stats = RegridStats()
    new = regrid(t, t.pos, CFG, stats)
    assert np.array_equal(new.ids, t.ids)
    assert stats.n_newton_failed == 0
    assert np.abs(np.linalg.norm(new.pos, axis=1) - 1).max() <= 1e-4
    assert (new.nrm * new.prev_nrm).sum(axis=1).min() > 0.99
    assert np.abs(np.linalg.norm(new.nrm, axis=1) - 1).max() <= 1e-12


def test_regrid_value_transfer_order(sphere_tube):
    errs = []
    for dx in (0.2, 0.1, 0.05):
        t = sphere_tube(dx)
        t.vals = (t.pos[:, 0] * t.pos[:, 1])[:, None]
        new = regrid(t, t.pos, CFG)
        errs.append(np.abs(new.vals[:, 0] - new.pos[:, 0] * new.pos[:, 1]).max())
    assert errs[2] <= 10 * 0.05**3
    assert np.log2(errs[1] / errs[2]) >= 2.5


def test_closest_point_on_plane_patch(rng):
    # graph z = a x + b y: the closest point is the orthogonal projection
    a, b = 0.3, -0.7
    coef = np.tile([0.0, a, b, 0.0, 0.0, 0.0], (50, 1))
    p = rng.normal(scale=0.1, size=(50, 3))
    xy, ok = kernels.closest_on_quadratic(coef, p, 1e-14, 30)
    assert ok.all()
    n = np.array([-a, -b, 1.0]) / np.sqrt(1 + a * a + b * b)
    proj = p - (p @ n)[:, None] * n
    assert np.abs(xy - proj[:, :2]).max() <= 1e-13


def test_closest_point_on_curved_patch(rng):
    coef = np.tile([0.0, 0.1, -0.2, -0.5, 0.3, -0.4], (200, 1))
    p = rng.normal(scale=0.1, size=(200, 3))
    xy, ok = kernels.closest_on_quadratic(coef, p, 1e-14, 30)
    assert ok.all()
    # stationarity of the squared distance
    x, y = xy.T
    c = coef[0]
    h = c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y
    hx = c[1] + 2 * c[3] * x + c[4] * y
    hy = c[2] + c[4] * x + 2 * c[5] * y
    r = h - p[:, 2]
    assert np.abs(x - p[:, 0] + r * hx).max() <= 1e-13
    assert np.abs(y - p[:, 1] + r * hy).max() <= 1e-13
    # and a minimum over a local sample
    for k in range(5):
        dx = rng.normal(scale=1e-3, size=(100, 2))
        xs, ys = x[k] + dx[:, 0], y[k] + dx[:, 1]
        hs = c[0] + c[1] * xs + c[2] * ys + c[3] * xs * xs + c[4] * xs * ys + c[5] * ys * ys
        d0 = (x[k] - p[k, 0]) ** 2 + (y[k] - p[k, 1]) ** 2 + r[k] ** 2
        assert np.all((xs - p[k, 0]) ** 2 + (ys - p[k, 1]) ** 2 + (hs - p[k, 2]) ** 2 >= d0 - 1e-15)


def test_translation_tracks_fresh_tube():
    dx = 0.1
    g = GridSpec.from_bounds((-1.6,) * 3, (1.6,) * 3, dx)
    t = initialize_tube(Sphere((0, 0, 0), 1.0), g, 1.5)
    n0 = t.n
    law = VelocityLaw("ambient", field=const_field([1.0, 1.0, 1.0]))
    stats = RegridStats()
    steps, dt = 3, dx / 3
    for k in range(steps * 2):
        moved = move_footpoints(t, law, k * dt, dt)
        t = regrid(t, moved, CFG, stats)
        assert stats.n_newton_failed == 0
        assert (t.nrm * t.prev_nrm).sum(axis=1).min() > 0
    shift = 2 * dx
    fresh = initialize_tube(Sphere((shift,) * 3, 1.0), g, 1.5)
    assert abs(t.n - n0) <= 0.05 * n0
    assert np.array_equal(t.ids, fresh.ids)
    assert np.abs(np.linalg.norm(t.pos - shift, axis=1) - 1).max() <= 1e-3


def test_translation_radius_per_step_fine_grid():
    dx = 0.01
    c = VORTEX_CENTER
    g = GridSpec.from_bounds((0.1,) * 3, (0.6,) * 3, dx)
    t = initialize_tube(Sphere(c, VORTEX_RADIUS), g, 1.5)
    law = VelocityLaw("ambient", field=const_field([1.0, 0.5, 0.0]))
    dt = 0.5 * dx
    moved = move_footpoints(t, law, 0.0, dt)
    new = regrid(t, moved, CFG)
    r = np.linalg.norm(new.pos - c - dt * np.array([1.0, 0.5, 0.0]), axis=1)
    assert np.abs(r - VORTEX_RADIUS).max() <= 1e-6


def test_transfer_values_examples(rng):
    ang = rng.uniform(0, 2 * np.pi, 16)
    r = 0.1 * np.sqrt(rng.uniform(0.1, 1, 16))
    pts = np.stack([r * np.cos(ang), r * np.sin(ang), np.zeros(16)], axis=1)
    assert transfer_values(pts, np.full(16, 2.5), 2.5, new_xy=(0.03, -0.01)) == 2.5
    lin = 1.0 + 3 * pts[:, 0] - 2 * pts[:, 1]
    got = transfer_values(pts, lin, 1.0, new_xy=(0.03, -0.01))
    assert got == pytest.approx(1.0 + 0.09 + 0.02, abs=1e-10)


def test_transfer_values_degenerate(caplog):
    pts = np.array([[0.1, 0, 0], [0.2, 0, 0], [0.3, 0, 0], [0.4, 0, 0], [0.5, 0, 0], [0.6, 0, 0]])
    with caplog.at_level(logging.WARNING):
        assert transfer_values(pts, np.arange(6.0), 7.0) == 7.0
    assert "degenerate" in caplog.text
