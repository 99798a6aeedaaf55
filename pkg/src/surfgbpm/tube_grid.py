"""Uniform background grid, the computational tube and footpoint storage.

A footpoint is the closest surface point of an active grid point. The tube
stores one row per active grid point, keyed by the row-major linear grid
index and kept sorted by it, so row order is canonical and runs are
reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import EmptyTubeError, OutOfDomainError, UnderResolvedError

# the 26 face/edge/corner offsets plus the point itself
_OFFSETS = np.array(
    [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)],
    dtype=np.int64,
)

MIN_NEIGHBORS = 6


@dataclass(frozen=True)
class GridSpec:
    """Uniform Cartesian grid.

    Parameters
    ----------
    origin : array_like, shape (3,)
        Coordinates of grid point (0, 0, 0).
    dx : float
        Grid spacing, equal on all axes.
    shape : tuple of int
        Number of grid points per axis.
    """

    origin: tuple
    dx: float
    shape: tuple

    def __post_init__(self):
        if not self.dx > 0:
            raise ValueError("grid spacing must be positive")
        if len(self.shape) != 3 or min(self.shape) < 2:
            raise ValueError("grid needs at least 2 points per axis")
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    @classmethod
    def from_bounds(cls, lo, hi, dx: float) -> "GridSpec":
        """Grid covering the box ``[lo, hi]`` with points at ``lo + i*dx``."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        shape = np.floor((hi - lo) / dx + 1e-9).astype(int) + 1
        return cls(tuple(lo), float(dx), tuple(shape))

    @property
    def size(self) -> int:
        nx, ny, nz = self.shape
        return nx * ny * nz

    def coords(self, ids: np.ndarray) -> np.ndarray:
        """Integer grid coordinates (N, 3) of linear indices."""
        ny, nz = self.shape[1], self.shape[2]
        ids = np.asarray(ids, dtype=np.int64)
        k = ids % nz
        j = (ids // nz) % ny
        i = ids // (ny * nz)
        return np.stack([i, j, k], axis=1)

    def linear(self, ijk: np.ndarray) -> np.ndarray:
        ny, nz = self.shape[1], self.shape[2]
        ijk = np.asarray(ijk, dtype=np.int64)
        return (ijk[:, 0] * ny + ijk[:, 1]) * nz + ijk[:, 2]

    def points(self, ids: np.ndarray) -> np.ndarray:
        """Positions (N, 3) of grid points."""
        return np.asarray(self.origin) + self.dx * self.coords(ids).astype(float)


@dataclass
class TubeGrid:
    """The active-point tube with one footpoint per active grid point.

    Attributes
    ----------
    grid : GridSpec
    tube_radius : float
        Tube half-width in grid units.
    ids : ndarray of int64, shape (N,)
        Sorted linear indices of active grid points (host grid points).
    pos, nrm, prev_nrm : ndarray, shape (N, 3)
        Footpoint positions, outward unit normals, normals before the last move.
    vals : ndarray, shape (N, m)
        Carried PDE unknowns.
    """

    grid: GridSpec
    tube_radius: float
    ids: np.ndarray
    pos: np.ndarray
    nrm: np.ndarray
    prev_nrm: np.ndarray
    vals: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def hosts(self) -> np.ndarray:
        return self.grid.points(self.ids)

    def footpoint_of(self, grid_index: int) -> int:
        """Row of the footpoint owned by an active grid index."""
        r = int(np.searchsorted(self.ids, grid_index))
        if r >= self.n or self.ids[r] != grid_index:
            raise KeyError(f"grid index {grid_index} is not active")
        return r

    def copy(self) -> "TubeGrid":
        return TubeGrid(self.grid, self.tube_radius, self.ids.copy(), self.pos.copy(),
                        self.nrm.copy(), self.prev_nrm.copy(), self.vals.copy(), dict(self.meta))

    @property
    def max_shells(self) -> int:
        return max(1, int(np.floor(5 * self.tube_radius)))


def check_inside(grid: GridSpec, ids: np.ndarray) -> None:
    """Raise if any grid index lies on the outer layer of the grid."""
    if len(ids) == 0:
        return
    c = grid.coords(ids)
    hi = np.asarray(grid.shape) - 1
    bad = np.any((c <= 0) | (c >= hi), axis=1)
    if bad.any():
        raise OutOfDomainError(
            f"tube reached the domain boundary at grid index {int(ids[np.argmax(bad)])}",
            indices=ids[bad])


def initialize_tube(surface, grid: GridSpec, tube_radius: float, init=None,
                    n_fields: int = 1, clip: bool = False, chunk: int = 1 << 18) -> TubeGrid:
    """Activate every grid point within ``tube_radius * dx`` of the surface.

    Parameters
    ----------
    surface : ImplicitSurface
    grid : GridSpec
    tube_radius : float
        In grid units.
    init : callable, optional
        ``init(pos) -> (N, n_fields)`` initial values at footpoints.
    clip : bool
        Drop grid points on the outer layer instead of raising; for open
        test surfaces that cross the box.
    """
    width = tube_radius * grid.dx
    kept_ids, kept_cp, kept_n = [], [], []
    for start in range(0, grid.size, chunk):
        ids = np.arange(start, min(start + chunk, grid.size), dtype=np.int64)
        p = grid.points(ids)
        # prefilter with a generous margin; the exact test follows
        near = surface.distance_bound(p) <= 2.0 * width + grid.dx
        if not near.any():
            continue
        ids, p = ids[near], p[near]
        cp, n, dist = surface.closest_point(p)
        sel = np.abs(dist) <= width
        kept_ids.append(ids[sel])
        kept_cp.append(cp[sel])
        kept_n.append(n[sel])
    if not kept_ids or sum(len(i) for i in kept_ids) == 0:
        raise EmptyTubeError("surface does not intersect the grid tube")
    ids = np.concatenate(kept_ids)
    pos = np.concatenate(kept_cp)
    nrm = np.concatenate(kept_n)
    if clip:
        c = grid.coords(ids)
        inner = np.all((c > 0) & (c < np.asarray(grid.shape) - 1), axis=1)
        ids, pos, nrm = ids[inner], pos[inner], nrm[inner]
    check_inside(grid, ids)
    if init is None:
        vals = np.zeros((len(ids), n_fields))
    else:
        vals = np.asarray(init(pos), dtype=float).reshape(len(ids), -1)
    return TubeGrid(grid, float(tube_radius), ids, pos, nrm, nrm.copy(), vals)


def knn_table(tube: TubeGrid, points: np.ndarray, queries: np.ndarray, k: int,
              exclude: np.ndarray | None = None):
    """k nearest of ``points`` (one per footpoint row) to each query.

    Search is a grid-shell expansion from the query's bin, capped at
    ``5 * tube_radius`` shells. Ties are broken by row index. Missing
    entries are padded with -1 / inf.
    """
    if exclude is None:
        exclude = np.full(len(queries), -1, dtype=np.int64)
    g = tube.grid
    return kernels.knn(np.ascontiguousarray(points, dtype=np.float64),
                       np.ascontiguousarray(queries, dtype=np.float64), int(k),
                       np.asarray(g.origin, dtype=np.float64), float(g.dx),
                       np.asarray(g.shape, dtype=np.int64), tube.max_shells,
                       np.ascontiguousarray(exclude, dtype=np.int64))


def neighbor_table(tube: TubeGrid, k: int, pos: np.ndarray | None = None):
    """Neighbour rows (N, k) of every footpoint, self excluded, nearest first."""
    pos = tube.pos if pos is None else pos
    idx, dist = knn_table(tube, pos, pos, k, np.arange(tube.n, dtype=np.int64))
    found = (idx >= 0).sum(axis=1)
    if tube.n and found.min() < MIN_NEIGHBORS:
        r = int(np.argmin(found))
        raise UnderResolvedError(
            f"footpoint at grid index {int(tube.ids[r])} has only {int(found[r])} neighbours "
            f"within {tube.max_shells} shells", indices=tube.ids[found < MIN_NEIGHBORS])
    return idx, dist


def collect_neighbor_footpoints(tube: TubeGrid, row: int, n_target: int = 16) -> np.ndarray:
    """Rows of the ``n_target`` footpoints nearest to footpoint ``row``.

    Sorted by ascending distance (ties by row), ``row`` itself excluded.
    """
    if n_target < MIN_NEIGHBORS:
        raise ValueError(f"n_target must be at least {MIN_NEIGHBORS}")
    idx, _ = knn_table(tube, tube.pos, tube.pos[row:row + 1], n_target,
                       np.array([row], dtype=np.int64))
    idx = idx[0][idx[0] >= 0]
    if len(idx) < MIN_NEIGHBORS:
        raise UnderResolvedError(
            f"footpoint at grid index {int(tube.ids[row])} has only {len(idx)} neighbours",
            indices=tube.ids[row:row + 1])
    return idx


def candidate_ids(tube: TubeGrid) -> np.ndarray:
    """Active grid indices together with all their 26-neighbours, sorted."""
    g = tube.grid
    c = g.coords(tube.ids)
    nb = (c[:, None, :] + _OFFSETS[None, :, :]).reshape(-1, 3)
    hi = np.asarray(g.shape) - 1
    if np.any((nb < 0) | (nb > hi)):
        raise OutOfDomainError("tube neighbourhood leaves the grid")
    ids = np.unique(g.linear(nb))
    check_inside(g, ids)
    return ids


def update_tube(tube: TubeGrid, cand: np.ndarray, pos: np.ndarray, nrm: np.ndarray,
                prev_nrm: np.ndarray, vals: np.ndarray, dist: np.ndarray,
                ok: np.ndarray | None = None) -> TubeGrid:
    """Keep candidates whose resampled closest point is within the tube.

    ``cand`` must be sorted; rows of the result follow it. Points farther than
    ``tube_radius * dx`` are deactivated.
    """
    keep = dist <= tube.tube_radius * tube.grid.dx
    if ok is not None:
        keep &= ok
    if not keep.any():
        raise EmptyTubeError("all footpoints left the tube")
    ids = cand[keep]
    check_inside(tube.grid, ids)
    return TubeGrid(tube.grid, tube.tube_radius, ids, pos[keep], nrm[keep],
                    prev_nrm[keep], vals[keep], dict(tube.meta))
