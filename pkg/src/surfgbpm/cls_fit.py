"""Local least-squares fits and derivative stencils.

Two stencil bases are supported:

``polynomial``
    Constrained quadratic least squares. The fit passes through the base
    value, so only the five non-constant monomials appear and the stencil
    acts on differences ``value_p - value_0``.
``rbf_gsp``
    Gaussian RBFs centred on ghost points placed on a ring around the base
    point, with a quadratic polynomial tail (x, y, x^2, xy, y^2) and the
    matching moment rows.

Rows of the least-squares systems are scaled by alignment weights ``c_i``.
Coordinates are rescaled by the largest projected neighbour distance before
the pseudo-inverse is taken and derivative rows are scaled back afterwards.
For the polynomial basis this only improves conditioning. For the RBF basis
the ghost ring sits at radius 1/2 in the scaled coordinates and the moment
rows are written there, which makes the stencil independent of the spacing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateFitError
from .geometry import frame_matrices

DERIV_SCALE = np.array([1.0, 1.0, 2.0, 1.0, 2.0])  # diag of the derivative-evaluation matrix
BASIS_NAMES = ("polynomial", "rbf_gsp")
# the Gaussian part of the RBF fit needs neighbours on all sides of the ghost
# ring; with 16 the stencil is unstable on lopsided clouds
DEFAULT_NEIGHBORS = {"polynomial": 16, "rbf_gsp": 24}


@dataclass(frozen=True)
class StencilConfig:
    """Stencil parameters.

    Parameters
    ----------
    basis : {"polynomial", "rbf_gsp"}
    n_neighbors : int, optional
        Default 16 for the polynomial basis and 24 for the RBF basis.
    n_ghost : int
        Number of ghost points for the RBF basis.
    epsilon : float, optional
        Dimensionless Gaussian shape factor (default 3); the kernel uses
        ``epsilon / r`` with ``r`` the ghost-ring radius.
    theta_max : float
        Alignment cutoff angle in radians.
    rcond : float
        Relative singular-value cutoff of the pseudo-inverse.
    weighted : bool
        If False, all alignment weights are 1.
    rbf_tail : int
        Polynomial tail of the RBF basis: 2 (x, y) or 5 (adds x^2, xy, y^2).
    """

    basis: str = "polynomial"
    n_neighbors: int | None = None
    n_ghost: int = 8
    epsilon: float = 3.0
    theta_max: float = np.pi / 3
    rcond: float = 1e-10
    weighted: bool = True
    rbf_tail: int = 5

    def __post_init__(self):
        if self.basis not in BASIS_NAMES:
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.n_neighbors is None:
            object.__setattr__(self, "n_neighbors", DEFAULT_NEIGHBORS[self.basis])
        if self.n_neighbors < 6:
            raise ValueError("n_neighbors must be at least 6")
        if self.n_ghost < 3:
            raise ValueError("n_ghost must be at least 3")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.theta_max < np.pi:
            raise ValueError("theta_max must lie in (0, pi)")
        if not 0 < self.rcond < 1:
            raise ValueError("rcond must lie in (0, 1)")
        if self.rbf_tail not in (2, 5):
            raise ValueError("rbf_tail must be 2 or 5")


# ---------------------------------------------------------------------------
# single-footpoint helpers
# ---------------------------------------------------------------------------

def alignment_weights(n0, normals, theta_max: float = np.pi / 3, weighted: bool = True):
    """``c_i = n0 . n_i`` where that exceeds ``cos(theta_max)``, else 0."""
    normals = np.atleast_2d(normals)
    if not weighted:
        return np.ones(len(normals))
    d = normals @ np.asarray(n0, dtype=float)
    return np.where(d > np.cos(theta_max), d, 0.0)


def project_neighbors(frame, points) -> np.ndarray:
    """Local coordinates (x, y, z) of world points in ``frame``."""
    return frame.to_local(np.atleast_2d(points))


def fit_weighted_quadratic(points, c=None, rcond: float = 1e-10):
    """Weighted least-squares quadratic ``h`` through local points.

    The base point (origin, weight 1) is included as the first row.

    Returns
    -------
    coef : ndarray, shape (6,)
        ``(a00, a10, a01, a20, a11, a02)``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    c = np.ones(len(points)) if c is None else np.asarray(c, dtype=float)
    coef, rank = kernels.quad_fits(points[None], c[None], rcond)
    if rank[0] < 6:
        raise DegenerateFitError(f"quadratic fit has rank {int(rank[0])} < 6")
    return coef[0]


def poly_stencil(points, c=None, rcond: float = 1e-10) -> np.ndarray:
    """Constrained quadratic stencil, shape (5, M), rows (d_x, d_y, d_xx, d_xy, d_yy)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    c = np.ones(len(points)) if c is None else np.asarray(c, dtype=float)
    W, rank = kernels.poly_stencils(points[None], c[None], rcond)
    if rank[0] < 5:
        raise DegenerateFitError(f"polynomial stencil has rank {int(rank[0])} < 5")
    return W[0]


def ghost_points(points, d: int = 8) -> np.ndarray:
    """Ghost ring: d points at radius half the largest projected distance."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    r = 0.5 * np.max(np.hypot(points[:, 0], points[:, 1]))
    if r == 0.0:
        raise DegenerateFitError("all neighbours project onto the base point")
    ang = 2.0 * np.pi * np.arange(d) / d
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


def rbf_gsp_stencil(points, c=None, n_ghost: int = 8, epsilon: float = 3.0,
                    rcond: float = 1e-10, tail: int = 5) -> np.ndarray:
    """RBF ghost-point stencil, shape (5, M)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    c = np.ones(len(points)) if c is None else np.asarray(c, dtype=float)
    W, rank, _ = kernels.rbf_stencils(points[None], c[None], n_ghost, epsilon, rcond, tail)
    if rank[0] < n_ghost + tail:
        raise DegenerateFitError(f"RBF block system has rank {int(rank[0])} < {n_ghost + tail}")
    return W[0]


def apply_stencil(W, values_nbr, value0) -> np.ndarray:
    """Five local derivatives from a stencil and samples."""
    values_nbr = np.asarray(values_nbr, dtype=float)
    if W.shape[-1] != values_nbr.shape[0]:
        raise ValueError("stencil and neighbour values differ in length")
    return W @ (values_nbr - value0)


def quadratic_from_stencil(W, values_nbr, value0) -> np.ndarray:
    """Coefficients (b10, b01, b20, b11, b02) of the constrained quadratic."""
    return apply_stencil(W, values_nbr, value0) / DERIV_SCALE


# ---------------------------------------------------------------------------
# batched patches
# ---------------------------------------------------------------------------

@dataclass
class Patches:
    """Per-footpoint local reconstructions.

    Attributes
    ----------
    frames : (N, 3, 3) rows (t1, t2, n)
    nbr : (N, K) neighbour rows (padding entries point at the row itself)
    proj : (N, K, 3) local neighbour coordinates
    c : (N, K) alignment weights (0 on padding)
    coef : (N, 6) weighted quadratic fit of the surface height
    rank : (N,) rank of each fit
    """

    frames: np.ndarray
    nbr: np.ndarray
    proj: np.ndarray
    c: np.ndarray
    coef: np.ndarray
    rank: np.ndarray

    @property
    def jets(self) -> np.ndarray:
        """(N, 5) array of (h_x, h_y, h_xx, h_xy, h_yy) at the origins."""
        a = self.coef
        return np.stack([a[:, 1], a[:, 2], 2 * a[:, 3], a[:, 4], 2 * a[:, 5]], axis=1)


def _project(pos, origins, frames, nbr):
    d = pos[nbr] - origins[:, None, :]
    return d @ frames.transpose(0, 2, 1)


def _weights(weight_normals, base_normals, nbr, cfg: StencilConfig):
    if not cfg.weighted:
        return np.ones(nbr.shape)
    d = np.einsum("nkj,nj->nk", weight_normals[nbr], base_normals)
    return np.where(d > np.cos(cfg.theta_max), d, 0.0)


def _pad(nbr, self_rows):
    missing = nbr < 0
    return np.where(missing, self_rows[:, None], nbr), missing


def build_patches(pos, frame_normals, weight_normals, nbr, cfg: StencilConfig,
                  origins=None, refine: bool = True, base_normals=None,
                  self_rows=None) -> Patches:
    """Fit the weighted quadratic height at every footpoint.

    Parameters
    ----------
    pos : (N, 3) positions of the cloud the neighbour rows refer to.
    frame_normals : (N, 3) normals defining each local frame.
    weight_normals : (N, 3) normals entering the alignment weights.
    nbr : (N, K) neighbour rows, -1 padded.
    origins : (N, 3), optional
        Frame origins; default ``pos``.
    refine : bool
        Rebuild the frame from the fitted normal once where ``|h_x|`` or
        ``|h_y|`` exceeds 1.
    base_normals, self_rows : optional
        For a subset of rows: the base points' weight normals and their rows
        in ``pos`` (used for padding). Default: the whole cloud in order.
    """
    origins = pos if origins is None else origins
    base_normals = weight_normals if base_normals is None else base_normals
    if self_rows is None:
        self_rows = np.arange(len(nbr), dtype=np.int64)
    nbr, missing = _pad(nbr, self_rows)
    frames = frame_matrices(frame_normals)
    c = _weights(weight_normals, base_normals, nbr, cfg)
    c[missing] = 0.0
    proj = _project(pos, origins, frames, nbr)
    coef, rank = kernels.quad_fits(proj, c, cfg.rcond)
    if refine:
        bad = np.flatnonzero((np.abs(coef[:, 1]) > 1) | (np.abs(coef[:, 2]) > 1))
        if len(bad):
            nl = np.stack([-coef[bad, 1], -coef[bad, 2], np.ones(len(bad))], axis=1)
            nw = np.einsum("ni,nij->nj", nl, frames[bad])
            frames[bad] = frame_matrices(nw)
            proj[bad] = _project(pos, origins[bad], frames[bad], nbr[bad])
            coef[bad], rank[bad] = kernels.quad_fits(proj[bad], c[bad], cfg.rcond)
    return Patches(frames, nbr, proj, c, coef, rank)


def _widen(a, K, fill):
    if a.shape[1] == K:
        return a
    out = np.empty((a.shape[0], K) + a.shape[2:], dtype=a.dtype)
    out[:, : a.shape[1]] = a
    out[:, a.shape[1]:] = fill
    return out


def local_patches(tube, pos, frame_normals, weight_normals, cfg: StencilConfig,
                  refine: bool = True) -> Patches:
    """Neighbour search plus surface fits, widening degenerate rows once.

    Rows whose fit is rank deficient are refitted with twice as many
    neighbours; if that still fails a :class:`DegenerateFitError` is raised.
    """
    from .tube_grid import knn_table, neighbor_table

    nbr, _ = neighbor_table(tube, cfg.n_neighbors, pos)
    P = build_patches(pos, frame_normals, weight_normals, nbr, cfg, refine=refine)
    bad = np.flatnonzero(P.rank < 6)
    if len(bad):
        K2 = 2 * cfg.n_neighbors
        nb2, _ = knn_table(tube, pos, pos[bad], K2, bad.astype(np.int64))
        rows = np.arange(tube.n, dtype=np.int64)
        sub = build_patches(pos, frame_normals[bad], weight_normals, nb2, cfg,
                            origins=pos[bad], refine=refine,
                            base_normals=weight_normals[bad], self_rows=bad)
        if np.any(sub.rank < 6):
            r = bad[int(np.argmax(sub.rank < 6))]
            raise DegenerateFitError(
                f"surface fit at grid index {int(tube.ids[r])} stays rank deficient "
                f"with {K2} neighbours", indices=tube.ids[bad[sub.rank < 6]])
        nbr_w = _widen(P.nbr, K2, rows[:, None])
        nbr_w[bad] = sub.nbr
        proj = _widen(P.proj, K2, 0.0)
        proj[bad] = sub.proj
        c = _widen(P.c, K2, 0.0)
        c[bad] = sub.c
        P.frames[bad] = sub.frames
        P.coef[bad] = sub.coef
        P.rank[bad] = sub.rank
        P = Patches(P.frames, nbr_w, proj, c, P.coef, P.rank)
    return P


def stencils(patches: Patches, cfg: StencilConfig, basis: str | None = None):
    """Derivative stencils (N, 5, K) for every patch, and the rank array."""
    basis = cfg.basis if basis is None else basis
    if basis == "polynomial":
        W, rank = kernels.poly_stencils(patches.proj, patches.c, cfg.rcond)
        need = 5
    else:
        W, rank, _ = kernels.rbf_stencils(patches.proj, patches.c, cfg.n_ghost, cfg.epsilon,
                                          cfg.rcond, cfg.rbf_tail)
        need = cfg.n_ghost + cfg.rbf_tail
    return W, rank, need
