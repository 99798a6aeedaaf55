"""Footpoint motion, resampling and value transfer.

One regrid pass takes the moved footpoints and rebuilds the tube:

1. every moved footpoint gets a local patch: a frame from its
   before-motion normal, its nearest moved neighbours, alignment weights
   from before-motion normals and a weighted quadratic fit of the height;
2. every candidate grid point (active points and their 26-neighbours)
   picks its nearest moved footpoint and is projected onto that patch;
3. candidates whose new closest point is within the tube are kept, and
   their carried values are evaluated from a constrained quadratic fit of
   the values on the same patch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .cls_fit import DERIV_SCALE, StencilConfig, local_patches
from .errors import OutOfDomainError
from .geometry import patch_normal_local
from .tube_grid import TubeGrid, candidate_ids, knn_table, update_tube

log = logging.getLogger(__name__)

NEWTON_MAXIT = 30


@dataclass
class VelocityLaw:
    """Surface velocity.

    Parameters
    ----------
    kind : {"static", "ambient", "normal"}
    field : callable, optional
        ``field(x, t) -> (N, 3)`` for ambient laws.
    alpha, beta : float
        Normal laws use ``V = alpha * kappa + beta * u`` along the outward normal.
    component : int
        Which carried value plays ``u`` in a normal law.
    start_time : float
        The surface is held fixed before this time.
    """

    kind: str = "static"
    field: Callable | None = None
    alpha: float = 0.0
    beta: float = 0.0
    component: int = 0
    start_time: float = 0.0

    def __post_init__(self):
        if self.kind not in ("static", "ambient", "normal"):
            raise ValueError(f"unknown velocity kind {self.kind!r}")
        if self.kind == "ambient" and self.field is None:
            raise ValueError("ambient law needs a field")

    def moving(self, t: float) -> bool:
        return self.kind != "static" and t >= self.start_time - 1e-12

    def normal_speed(self, kappa, vals):
        return self.alpha * kappa + self.beta * vals[:, self.component]

    def velocity(self, pos, t, nrm=None, kappa=None, vals=None):
        """Velocity vectors at footpoints (N, 3)."""
        if not self.moving(t):
            return np.zeros_like(pos)
        if self.kind == "ambient":
            return np.asarray(self.field(pos, t), dtype=float)
        return self.normal_speed(kappa, vals)[:, None] * nrm


def rk4(field, x, t, dt):
    k1 = field(x, t)
    k2 = field(x + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = field(x + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = field(x + dt * k3, t + dt)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def move_footpoints(tube: TubeGrid, law: VelocityLaw, t: float, dt: float,
                    kappa=None) -> np.ndarray:
    """New footpoint positions after one step.

    Ambient fields use classical RK4; normal laws use forward Euler with the
    speed frozen at the start of the step.
    """
    if not law.moving(t):
        return tube.pos.copy()
    if law.kind == "ambient":
        new = rk4(law.field, tube.pos, t, dt)
    else:
        if kappa is None:
            raise ValueError("normal law needs curvature")
        V = law.normal_speed(kappa, tube.vals)
        new = tube.pos + dt * V[:, None] * tube.nrm
    g = tube.grid
    lo = np.asarray(g.origin)
    hi = lo + g.dx * (np.asarray(g.shape) - 1)
    if np.any(new <= lo) or np.any(new >= hi) or not np.all(np.isfinite(new)):
        raise OutOfDomainError("a footpoint left the domain box")
    return new


def _eval_quad(a, x, y):
    return a[:, 0] + a[:, 1] * x + a[:, 2] * y + a[:, 3] * x * x + a[:, 4] * x * y + a[:, 5] * y * y


@dataclass
class RegridStats:
    n_candidates: int = 0
    n_newton_failed: int = 0
    n_transfer_fallback: int = 0


def regrid(tube: TubeGrid, moved: np.ndarray, cfg: StencilConfig,
           stats: RegridStats | None = None) -> TubeGrid:
    """Resample moved footpoints onto the grid and update the tube.

    Parameters
    ----------
    tube : TubeGrid
        State before motion (normals and values are the before-motion ones).
    moved : (N, 3)
        Footpoint positions after motion.
    """
    g = tube.grid
    P = local_patches(tube, moved, tube.nrm, tube.nrm, cfg)
    # value-transfer quadratics on the same patches
    Wt, trank = kernels.poly_stencils(P.proj, P.c, cfg.rcond)
    dv = tube.vals[P.nbr] - tube.vals[:, None, :]  # (N, K, m)
    beta = (Wt @ dv) / DERIV_SCALE[None, :, None]
    bad_t = trank < 5
    if bad_t.any():
        log.warning("value transfer degenerate at %d footpoints; using nearest values",
                    int(bad_t.sum()))
        beta[bad_t] = 0.0

    cand = candidate_ids(tube)
    gp = g.points(cand)
    j, _ = knn_table(tube, moved, gp, 1)
    j = j[:, 0]
    if np.any(j < 0):
        raise OutOfDomainError("a candidate grid point has no footpoint within the search cap")
    R = P.frames[j]
    local = (R @ (gp - moved[j])[:, :, None])[:, :, 0]
    coef = P.coef[j]
    xy, ok = kernels.closest_on_quadratic(np.ascontiguousarray(coef),
                                          np.ascontiguousarray(local),
                                          1e-12 * g.dx, NEWTON_MAXIT)
    x, y = xy[:, 0], xy[:, 1]
    z = _eval_quad(coef, x, y)
    q = np.stack([x, y, z], axis=1)
    dist = np.linalg.norm(local - q, axis=1)
    pos = moved[j] + (q[:, None, :] @ R)[:, 0]
    hx = coef[:, 1] + 2 * coef[:, 3] * x + coef[:, 4] * y
    hy = coef[:, 2] + coef[:, 4] * x + 2 * coef[:, 5] * y
    nrm = (patch_normal_local(hx, hy)[:, None, :] @ R)[:, 0]
    mono = np.stack([x, y, x * x, x * y, y * y], axis=1)
    vals = tube.vals[j] + (mono[:, None, :] @ beta[j])[:, 0]

    active_before = np.isin(cand, tube.ids, assume_unique=True)
    if not ok.all():
        lost = ~ok & active_before
        if lost.any():
            log.warning("closest-point Newton failed at %d active grid points; dropped",
                        int(lost.sum()))
    if stats is not None:
        stats.n_candidates = len(cand)
        stats.n_newton_failed = int((~ok).sum())
        stats.n_transfer_fallback = int(bad_t.sum())
    new = update_tube(tube, cand, pos, nrm, tube.nrm[j], vals, dist, ok)
    return new


def resample(tube: TubeGrid, moved: np.ndarray, cfg: StencilConfig) -> TubeGrid:
    """Alias of :func:`regrid` (resampling and tube update happen together)."""
    return regrid(tube, moved, cfg)


def transfer_values(points_local, values_nbr, value0, c=None, new_xy=(0.0, 0.0),
                    rcond: float = 1e-10):
    """Evaluate the constrained quadratic fit of values at a local point.

    ``points_local`` are neighbour coordinates (M, 3) in the patch frame of
    the base footpoint carrying ``value0``.
    """
    pts = np.atleast_2d(np.asarray(points_local, dtype=float))
    c = np.ones(len(pts)) if c is None else np.asarray(c, dtype=float)
    W, rank = kernels.poly_stencils(pts[None], c[None], rcond)
    if rank[0] < 5:
        log.warning("value transfer degenerate; using the base value")
        return np.asarray(value0, dtype=float)
    b = (W[0] @ (np.asarray(values_nbr, dtype=float) - value0).T) / DERIV_SCALE[:, None] \
        if np.ndim(values_nbr) > 1 else W[0] @ (np.asarray(values_nbr, dtype=float) - value0) / DERIV_SCALE
    x, y = new_xy
    mono = np.array([x, y, x * x, x * y, y * y])
    return value0 + mono @ b
