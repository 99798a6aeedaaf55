import numpy as np
import pytest

from surfgbpm.cls_fit import StencilConfig
from surfgbpm.errors import ConfigError, StabilityError
from surfgbpm.evolution import VelocityLaw
from surfgbpm.operators import assemble
from surfgbpm.pde import (DIFFUSION_CFL, PdeSpec, check_time_step, dilation, double_well_prime,
                          euler_update, max_time_step, rates, step_advection_diffusion,
                          step_cahn_hilliard, step_reaction_diffusion_pair)
from surfgbpm.scenarios import ellipsoid_exact, run


@pytest.fixture(scope="module")
def sphere_ops():
    from surfgbpm.surfaces import Sphere
    from surfgbpm.tube_grid import GridSpec, initialize_tube

    g = GridSpec.from_bounds((-1.6,) * 3, (1.6,) * 3, 0.2)
    t = initialize_tube(Sphere((0, 0, 0), 1.0), g, 1.5)
    return t, assemble(t, StencilConfig())


@pytest.mark.parametrize("kw", [{"family": "heat"}, {"D": 0.0}, {"D2": -1.0}, {"Cn": 0.0},
                                {"gamma": -1.0}, {"Pe": 0.0}])
def test_spec_validation(kw):
    with pytest.raises(ConfigError):
        PdeSpec(**kw)


def test_n_fields():
    assert PdeSpec("reaction_diffusion_pair").n_fields == 2
    assert PdeSpec("cahn_hilliard").n_fields == 1
    assert PdeSpec("none").n_fields == 1


def test_max_time_step():
    assert max_time_step(PdeSpec("none"), 0.1) == np.inf
    assert max_time_step(PdeSpec(D=2.0), 0.1) == pytest.approx(DIFFUSION_CFL * 0.01 / 2.0)
    assert max_time_step(PdeSpec("reaction_diffusion_pair", D=1, D2=10), 0.1) == \
        pytest.approx(DIFFUSION_CFL * 0.01 / 10)
    ch = PdeSpec("cahn_hilliard", Cn=0.06)
    assert max_time_step(ch, 0.05) == pytest.approx(0.02 * 0.05**4 / 0.06**2)


def test_check_time_step():
    spec = PdeSpec(D=1.0)
    lim = max_time_step(spec, 0.1)
    check_time_step(spec, 0.1, lim)
    with pytest.raises(StabilityError) as ei:
        check_time_step(spec, 0.1, 1.01 * lim)
    assert ei.value.phase == "config" and ei.value.step == 0
    assert "use dt <=" in str(ei.value)


def test_double_well_prime():
    u = np.linspace(-1, 2, 31)
    h = 1e-6
    g = lambda s: s**2 * (1 - s) ** 2  # noqa: E731
    assert np.allclose(double_well_prime(u), (g(u + h) - g(u - h)) / (2 * h), atol=1e-7)
    assert np.array_equal(double_well_prime(np.array([0.0, 0.5, 1.0])), np.zeros(3))


def test_turing_steady_state(sphere_ops):
    t, ops = sphere_ops
    spec = PdeSpec("reaction_diffusion_pair", gamma=30.0, a=0.1, b=0.9)
    u, w = spec.steady_state()
    assert (u, w) == pytest.approx((1.0, 0.9))
    vals = np.tile([u, w], (t.n, 1))
    assert np.abs(rates(spec, ops, vals, t.pos, 0.0)).max() <= 1e-12


def test_cahn_hilliard_fixed_point(sphere_ops):
    t, ops = sphere_ops
    spec = PdeSpec("cahn_hilliard")
    for c in (0.0, 0.5, 1.0):
        vals = np.full((t.n, 1), c)
        assert np.abs(step_cahn_hilliard(spec, ops, vals, t.pos, 0.0, 1e-6) - c).max() <= 1e-12


def test_diffusion_step_linear(sphere_ops, rng):
    t, ops = sphere_ops
    spec = PdeSpec(D=1.0)
    a, b = rng.normal(size=(t.n, 1)), rng.normal(size=(t.n, 1))
    dt = 1e-3
    step = lambda v: step_advection_diffusion(spec, ops, v, t.pos, 0.0, dt)  # noqa: E731
    assert np.allclose(step(2 * a - b), 2 * step(a) - step(b), atol=1e-12)
    assert np.allclose(step(a), a + dt * ops.laplacian(a[:, 0])[:, None], atol=1e-15)


def test_source_and_dilation_terms(sphere_ops):
    t, ops = sphere_ops
    spec = PdeSpec(D=1.0, source=lambda x, s, v: np.full(len(x), 3.0))
    vals = np.full((t.n, 1), 2.0)
    div_v = np.full(t.n, 0.5)
    r = rates(spec, ops, vals, t.pos, 0.0, div_v)
    assert np.allclose(r, 3.0 - 2.0 * 0.5, atol=1e-10)


def test_dilation(sphere_ops):
    t, ops = sphere_ops
    vals = np.full((t.n, 1), 0.5)
    assert np.array_equal(dilation(ops, VelocityLaw("static"), t.pos, t.nrm, vals, 0.0),
                          np.zeros(t.n))
    law = VelocityLaw("normal", alpha=0.1, beta=2.0)
    want = ops.kappa * (0.1 * ops.kappa + 1.0)
    assert np.allclose(dilation(ops, law, t.pos, t.nrm, vals, 0.0), want)
    # uniform expansion x' = x has surface divergence 2 on the unit sphere
    amb = VelocityLaw("ambient", field=lambda x, s: x.copy())
    assert np.abs(dilation(ops, amb, t.pos, t.nrm, vals, 0.0) - 2).max() <= 0.2


def test_family_mismatch(sphere_ops):
    t, ops = sphere_ops
    vals = np.ones((t.n, 2))
    with pytest.raises(ConfigError):
        step_advection_diffusion(PdeSpec("cahn_hilliard"), ops, vals, t.pos, 0, 1e-6)
    with pytest.raises(ConfigError):
        step_reaction_diffusion_pair(PdeSpec(), ops, vals, t.pos, 0, 1e-6)
    with pytest.raises(ConfigError):
        step_cahn_hilliard(PdeSpec(), ops, vals, t.pos, 0, 1e-6)


def test_none_family_is_inert(sphere_ops):
    t, ops = sphere_ops
    vals = np.random.default_rng(1).normal(size=(t.n, 1))
    assert np.array_equal(euler_update(PdeSpec("none"), ops, vals, t.pos, 0, 1.0), vals)


def test_ellipsoid_source_matches_symbolic(rng):
    sympy = pytest.importorskip("sympy")
    from surfgbpm.scenarios import ellipsoid_source

    x, y, z, t = sympy.symbols("x y z t", real=True)
    a = 1 + sympy.sin(2 * t)
    X = sympy.Matrix([x, y, z])
    phi = x**2 / a + y**2 + z**2 - 1
    gphi = sympy.Matrix([phi.diff(s) for s in X])
    n = gphi / sympy.sqrt(gphi.dot(gphi))
    kappa = sum(n[i].diff(X[i]) for i in range(3))
    u = sympy.exp(-6 * t) * x * y
    gu = sympy.Matrix([u.diff(s) for s in X])
    Hu = sympy.hessian(u, X)
    lap = sum(Hu[i, i] for i in range(3)) - (n.T * Hu * n)[0] - kappa * n.dot(gu)
    v = sympy.Matrix([a.diff(t) / (2 * a) * x, 0, 0])
    Jv = v.jacobian(X)
    divs = sum(Jv[i, i] for i in range(3)) - (n.T * Jv * n)[0]
    f = sympy.lambdify((x, y, z, t), u.diff(t) + v.dot(gu) + u * divs - lap, "numpy")
    for tt in (0.0, 0.3, 1.1):
        aa = 1 + np.sin(2 * tt)
        d = rng.normal(size=(50, 3))
        d /= np.linalg.norm(d, axis=1)[:, None]
        p = d * np.array([np.sqrt(aa), 1.0, 1.0])
        want = f(p[:, 0], p[:, 1], p[:, 2], tt)
        assert np.allclose(ellipsoid_source(p, tt), want, rtol=1e-10, atol=1e-12)


def test_static_decay_short_run():
    # exp(-6t) xy on the unit sphere, first checkpoint only
    res = run("static_sphere_decay", dx=0.1, T=0.01, cadence=1, snapshots=False)
    assert res.report.rows[-1].time == pytest.approx(0.01)
    assert res.report.rows[-1].linf_error <= 5e-4
    ex = ellipsoid_exact(res.tube.pos, 0.01)
    assert np.abs(res.tube.vals[:, 0] - ex).max() == pytest.approx(res.report.rows[-1].linf_error)
