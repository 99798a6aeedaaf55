"""Named experiments and the time loop that drives them.

One step of the loop, in order: assemble operators on the current cloud,
update carried values, move footpoints, resample onto the grid. Operators
are reused while the surface is static.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cls_fit import StencilConfig
from .errors import GbpmError, StabilityError
from .evolution import VelocityLaw, move_footpoints, regrid
from .io import Checkpoint, RunConfig, RunReport, write_config, write_report, write_snapshot
from .operators import assemble
from .pde import PdeSpec, check_time_step, dilation, euler_update
from .surfaces import Ellipsoid, Sphere, Torus
from .tube_grid import GridSpec, TubeGrid, initialize_tube

log = logging.getLogger(__name__)

BLOWUP = 1e6
# resampling always uses the paper's 16-neighbour polynomial patches,
# independent of the operator basis
GEOMETRY_NEIGHBORS = 16


@dataclass
class Scenario:
    """A configured experiment.

    ``init(pos, rng) -> (N, m)`` gives initial values; ``exact(pos, t) -> (N,)``
    is the exact first field when known.
    """

    name: str
    surface: object
    bounds: tuple
    law: VelocityLaw
    pde: PdeSpec
    init: Callable
    dx: float
    dt: float
    T: float
    exact: Callable | None = None
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# scenario definitions
# ---------------------------------------------------------------------------

VORTEX_CENTER = np.array([0.35, 0.35, 0.35])
VORTEX_RADIUS = 0.15


def vortex_field(T: float):
    def v(x, t):
        c = np.cos(np.pi * t / T)
        sx, sy, sz = (np.sin(np.pi * x[:, i]) for i in range(3))
        s2x, s2y, s2z = (np.sin(2 * np.pi * x[:, i]) for i in range(3))
        return c * np.stack([2 * sx**2 * s2y * s2z, -s2x * sy**2 * s2z, -s2x * s2y * sz**2], axis=1)

    return v


def ellipsoid_a(t):
    return 1.0 + np.sin(2.0 * t)


def ellipsoid_da(t):
    return 2.0 * np.cos(2.0 * t)


def ellipsoid_exact(pos, t):
    return np.exp(-6.0 * t) * pos[:, 0] * pos[:, 1]


def ellipsoid_source(pos, t, vals=None):
    """Source making ``exp(-6t) xy`` exact on ``x^2/a + y^2 + z^2 = 1``."""
    a, da = ellipsoid_a(t), ellipsoid_da(t)
    x, y, z = pos[:, 0], pos[:, 1], pos[:, 2]
    N = x * x + a * a * (y * y + z * z)
    g = (-6.0 + da / a * (1.0 - x * x / (2.0 * N)) + (1.0 + 5.0 * a + 2.0 * a * a) / N
         - (1.0 + a) / N**2 * (x * x + a**3 * (y * y + z * z)))
    return g * ellipsoid_exact(pos, t)


def ellipsoid_velocity(x, t):
    # x-semi-axis is sqrt(a): material points scale by sqrt(a(t))
    v = np.zeros_like(x)
    v[:, 0] = ellipsoid_da(t) / (2.0 * ellipsoid_a(t)) * x[:, 0]
    return v


def _uniform_noise(base, mag):
    base = np.asarray(base, dtype=float)

    def init(pos, rng):
        return base[None, :] + rng.uniform(-mag, mag, size=(len(pos), len(base)))

    return init


def build_scenario(name: str, cfg: RunConfig | None = None) -> Scenario:
    """Scenario with its default resolution, step and end time."""
    cfg = cfg or RunConfig(scenario=name)
    if name == "vortex_sphere":
        T = 1.5 if cfg.T is None else cfg.T
        dx = 0.01 if cfg.dx is None else cfg.dx
        sc = Scenario(name, Sphere(VORTEX_CENTER, VORTEX_RADIUS), ((0.0,) * 3, (1.0,) * 3),
                      VelocityLaw("ambient", field=vortex_field(T)), PdeSpec("none"),
                      lambda p, rng: np.zeros((len(p), 1)), dx, 0.5 * dx, T)
    elif name == "oscillating_ellipsoid":
        dx = 0.1 if cfg.dx is None else cfg.dx
        sc = Scenario(name, Sphere((0, 0, 0), 1.0), ((-1.7,) * 3, (1.7,) * 3),
                      VelocityLaw("ambient", field=ellipsoid_velocity),
                      PdeSpec("advection_diffusion", D=1.0, source=ellipsoid_source),
                      lambda p, rng: ellipsoid_exact(p, 0.0)[:, None], dx, 0.1 * dx * dx, 0.04,
                      exact=ellipsoid_exact)
    elif name == "static_sphere_decay":
        dx = 0.1 if cfg.dx is None else cfg.dx
        sc = Scenario(name, Sphere((0, 0, 0), 1.0), ((-1.5,) * 3, (1.5,) * 3),
                      VelocityLaw("static"), PdeSpec("advection_diffusion", D=1.0),
                      lambda p, rng: ellipsoid_exact(p, 0.0)[:, None], dx, 0.1 * dx * dx, 0.05,
                      exact=ellipsoid_exact)
    elif name == "cahn_hilliard_sphere":
        dx = 0.05 if cfg.dx is None else cfg.dx
        spec = PdeSpec("cahn_hilliard", Pe=1.0, nu=1.0, Cn=0.06)
        sc = Scenario(name, Sphere((0, 0, 0), 1.0), ((-1.5,) * 3, (1.5,) * 3),
                      VelocityLaw("static"), spec, _uniform_noise([0.5], 0.01), dx,
                      0.5 * spec.fourth_order_c * dx**4 / spec.Cn**2, 1.0)
    elif name == "turing_sphere":
        dx = 0.1 if cfg.dx is None else cfg.dx
        gamma = 30.0 if cfg.gamma is None else cfg.gamma
        spec = PdeSpec("reaction_diffusion_pair", D=1.0, D2=10.0, gamma=gamma, a=0.1, b=0.9)
        sc = Scenario(name, Sphere((0, 0, 0), 1.0), ((-1.5,) * 3, (1.5,) * 3),
                      VelocityLaw("static"), spec, _uniform_noise([1.0, 0.9], 0.01), dx,
                      2e-4, 10.0)
    elif name == "coupled_torus":
        dx = 0.05 if cfg.dx is None else cfg.dx
        sc = Scenario(name, Torus((0, 0, 0), 1.0, 0.3), ((-2.0,) * 3, (2.0,) * 3),
                      VelocityLaw("normal", alpha=0.1, beta=5.0), PdeSpec("advection_diffusion", D=1.0),
                      lambda p, rng: (1.0 + 20.0 * p[:, 0] * p[:, 1] * p[:, 2])[:, None],
                      dx, 0.1 * dx * dx, 0.08)
    elif name == "tumor_growth":
        dx = 0.1 if cfg.dx is None else cfg.dx
        gamma = 30.0 if cfg.gamma is None else cfg.gamma
        spec = PdeSpec("reaction_diffusion_pair", D=1.0, D2=10.0, gamma=gamma, a=0.1, b=0.9)
        sc = Scenario(name, Sphere((0, 0, 0), 1.0), ((-3.0,) * 3, (3.0,) * 3),
                      VelocityLaw("normal", alpha=-0.01, beta=0.1, start_time=5.0), spec,
                      _uniform_noise([1.0, 0.9], 0.01), dx, 2e-4, 10.0)
    elif name == "cahn_hilliard_ellipsoid":
        dx = 0.05 if cfg.dx is None else cfg.dx
        spec = PdeSpec("cahn_hilliard", Pe=1.0, nu=1.0, Cn=0.03)

        def init(p, rng):
            return 0.5 + 0.01 * rng.standard_normal((len(p), 1))

        sc = Scenario(name, Ellipsoid((0, 0, 0), (1.0, 0.8, 0.8)), ((-2.5,) * 3, (2.5,) * 3),
                      VelocityLaw("normal", alpha=0.01, beta=0.4), spec, init, dx, 1e-4, 1.0)
    else:
        raise GbpmError(f"unknown scenario {name!r}")
    if cfg.dt is not None:
        sc.dt = cfg.dt
    if cfg.T is not None:
        sc.T = cfg.T
    return sc


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------

def linf_error(values, exact_values) -> float:
    """Largest absolute pointwise error."""
    return float(np.max(np.abs(np.asarray(values) - np.asarray(exact_values)), initial=0.0))


def l2_error(values, exact_values) -> float:
    """Root-mean-square pointwise error over footpoints."""
    d = np.asarray(values) - np.asarray(exact_values)
    return float(np.sqrt(np.mean(d * d))) if d.size else 0.0


def convergence_order(errors, spacings=None) -> list:
    """Observed orders ``log(e_k / e_{k+1}) / log(h_k / h_{k+1})``.

    Without ``spacings`` each refinement is taken to halve the spacing.
    """
    e = np.asarray(errors, dtype=float)
    if len(e) < 2:
        raise ValueError("need at least two errors")
    if np.any(~(e > 0)):
        raise ValueError("errors must be positive")
    if spacings is None:
        return list(np.log2(e[:-1] / e[1:]))
    h = np.asarray(spacings, dtype=float)
    if h.shape != e.shape or np.any(~(h > 0)) or np.any(h[:-1] == h[1:]):
        raise ValueError("spacings must be distinct, positive and match errors")
    return list(np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:]))


def count_spots(tube: TubeGrid, field: int = 0, k: int = 8) -> int:
    """Connected regions where a field exceeds its mean, on the k-nearest graph."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    from .tube_grid import neighbor_table

    u = tube.vals[:, field]
    high = u > u.mean()
    nbr, _ = neighbor_table(tube, k)
    rows = np.repeat(np.arange(tube.n), k)
    cols = nbr.ravel()
    keep = (cols >= 0) & high[rows] & high[np.maximum(cols, 0)]
    A = coo_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(tube.n, tube.n))
    _, labels = connected_components(A, directed=False)
    return int(len(np.unique(labels[high])))


def great_circle_sign_changes(tube: TubeGrid, level: float = 0.5, field: int = 0) -> int:
    """Sign changes of ``u - level`` around the equator band ``|z| < dx``, cyclically."""
    p = tube.pos
    band = np.abs(p[:, 2]) < tube.grid.dx
    ang = np.arctan2(p[band, 1], p[band, 0])
    s = np.sign(tube.vals[band, field][np.argsort(ang, kind="stable")] - level)
    s = s[s != 0]
    return int(np.count_nonzero(s != np.roll(s, 1))) if len(s) else 0


def radius_stats(pos, center=VORTEX_CENTER, r0=VORTEX_RADIUS) -> dict:
    r = np.linalg.norm(pos - center, axis=1)
    return {"mean_radius": float(r.mean()), "std_radius": float(r.std()),
            "max_location_error": float(np.abs(r - r0).max())}


# ---------------------------------------------------------------------------
# the time loop
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    report: RunReport
    tube: TubeGrid
    scenario: Scenario
    config: RunConfig
    snapshots: list = field(default_factory=list)


def stencil_config(cfg: RunConfig) -> StencilConfig:
    return StencilConfig(basis=cfg.basis, n_neighbors=cfg.n_neighbors, n_ghost=cfg.n_ghost,
                         epsilon=cfg.epsilon, theta_max=np.deg2rad(cfg.theta_max),
                         weighted=cfg.weighted)


def geometry_config(cfg: RunConfig) -> StencilConfig:
    return StencilConfig(basis="polynomial", n_neighbors=GEOMETRY_NEIGHBORS,
                         theta_max=np.deg2rad(cfg.theta_max), weighted=cfg.weighted)


def checkpoint_times(cfg: RunConfig, T: float) -> np.ndarray:
    if cfg.checkpoints:
        ts = [t for t in cfg.checkpoints if t <= T + 1e-12]
        return np.unique(np.concatenate([[0.0], ts, [T]]))
    return np.linspace(0.0, T, cfg.cadence + 2)


def _record(report, tube, t, sc, timings, extra_fn=None) -> Checkpoint:
    vals = tube.vals
    cp = Checkpoint(float(t), tube.n, field_min=tuple(vals.min(axis=0)),
                    field_max=tuple(vals.max(axis=0)), timings=dict(timings))
    if sc.exact is not None:
        ex = sc.exact(tube.pos, t)
        cp.linf_error = linf_error(vals[:, 0], ex)
        cp.l2_error = l2_error(vals[:, 0], ex)
    if sc.name == "vortex_sphere":
        cp.extra.update(radius_stats(tube.pos))
    if extra_fn is not None:
        cp.extra.update(extra_fn(tube, t))
    report.add(cp)
    return cp


def initial_tube(sc: Scenario, cfg: RunConfig) -> TubeGrid:
    """Tube at t=0 with seeded initial values."""
    grid = GridSpec.from_bounds(sc.bounds[0], sc.bounds[1], sc.dx)
    rng = np.random.default_rng(cfg.seed)
    return initialize_tube(sc.surface, grid, cfg.tube_radius,
                           init=lambda p: sc.init(p, rng), n_fields=max(sc.pde.n_fields, 1))


def run(scenario: str | Scenario, cfg: RunConfig | None = None, *, extra_fn=None,
        keep_tubes: bool = False, **overrides) -> RunResult:
    """Run a scenario to its end time.

    Parameters
    ----------
    scenario : str or Scenario
    cfg : RunConfig, optional
        Overrides; ``None`` fields take scenario defaults.
    extra_fn : callable, optional
        ``extra_fn(tube, t) -> dict`` recorded at each checkpoint.
    keep_tubes : bool
        Store a copy of the tube at each checkpoint in ``report.rows[i].extra["tube"]``.
    """
    if cfg is None:
        name = scenario if isinstance(scenario, str) else scenario.name
        cfg = RunConfig(scenario=name)
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    sc = build_scenario(scenario, cfg) if isinstance(scenario, str) else scenario
    if cfg.threads != 1:
        log.info("threads=%d requested; the reference implementation is serial", cfg.threads)
    scfg = stencil_config(cfg)
    gcfg = geometry_config(cfg)
    check_time_step(sc.pde, sc.dx, sc.dt)
    tube = initial_tube(sc, cfg)
    report = RunReport(sc.name, tube.vals.shape[1])
    result = RunResult(report, tube, sc, cfg)
    out = cfg.output_dir
    if out:
        os.makedirs(out, exist_ok=True)
        write_config(cfg, os.path.join(out, "config.resolved"))

    def checkpoint(t, timings):
        cp = _record(report, tube, t, sc, timings, extra_fn)
        if keep_tubes:
            cp.extra["tube"] = tube.copy()
        if out and cfg.snapshots:
            path = os.path.join(out, f"snapshot_{len(report.rows) - 1:04d}.csv")
            write_snapshot(tube, t, path)
            result.snapshots.append(path)
        log.info("t=%.6g n=%d linf=%.3e", t, tube.n, cp.linf_error)

    stops = checkpoint_times(cfg, sc.T)
    timings = {k: 0.0 for k in ("operators", "values", "move", "resample")}
    t = 0.0
    step = 0
    checkpoint(t, timings)
    ops = None
    ops_stale = False
    needs_ops = sc.pde.family != "none" or sc.law.kind == "normal"
    phase = "operators"
    try:
        for stop in stops[1:]:
            while t < stop - 1e-12 * max(1.0, stop):
                dt = min(sc.dt, stop - t)
                moving = sc.law.moving(t)
                if needs_ops and (ops is None or moving or ops_stale):
                    phase = "operators"
                    t0 = time.perf_counter()
                    ops = assemble(tube, scfg)
                    timings["operators"] += time.perf_counter() - t0
                ops_stale = False
                phase = "values"
                t0 = time.perf_counter()
                if sc.pde.family != "none":
                    div_v = dilation(ops, sc.law, tube.pos, tube.nrm, tube.vals, t)
                    new_vals = euler_update(sc.pde, ops, tube.vals, tube.pos, t, dt, div_v)
                    big = np.max(np.abs(new_vals), initial=0.0)
                    if not np.isfinite(big) or big > BLOWUP:
                        raise StabilityError(f"field magnitude {big:.3g} at t={t:.6g}")
                else:
                    new_vals = tube.vals
                timings["values"] += time.perf_counter() - t0
                if moving:
                    phase = "move"
                    t0 = time.perf_counter()
                    kappa = ops.kappa if ops is not None else None
                    moved = move_footpoints(tube, sc.law, t, dt, kappa=kappa)
                    timings["move"] += time.perf_counter() - t0
                    phase = "resample"
                    t0 = time.perf_counter()
                    tube.vals = new_vals
                    tube = regrid(tube, moved, gcfg)
                    timings["resample"] += time.perf_counter() - t0
                    ops_stale = True
                else:
                    tube.vals = new_vals
                t = stop if stop - (t + dt) <= 1e-12 * max(1.0, stop) else t + dt
                step += 1
            result.tube = tube
            checkpoint(t, timings)
    except GbpmError as exc:
        exc.phase = exc.phase or phase
        exc.step = step if exc.step is None else exc.step
        raise
    result.tube = tube
    if out:
        write_report(report, os.path.join(out, "report.csv"))
    return result
