"""Cloud-wide sparse surface operators assembled from local stencils."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cls_fit import Patches, StencilConfig, local_patches, stencils
from .errors import DegenerateFitError
from .geometry import gradient_local_coefficients, laplace_beltrami_coefficients, mean_curvature


@dataclass
class CloudOperators:
    """Discrete operators on one footpoint cloud.

    Attributes
    ----------
    lb : csr_matrix (N, N)
        Laplace-Beltrami.
    grad : tuple of three csr_matrix
        World x, y, z components of the surface gradient.
    kappa : (N,) mean curvature (sum convention) from the surface fits.
    jets : (N, 5) local height derivatives.
    patches : Patches
    W : (N, 5, K) derivative stencils.
    """

    lb: sp.csr_matrix
    grad: tuple
    kappa: np.ndarray
    jets: np.ndarray
    patches: Patches
    W: np.ndarray

    @property
    def n(self) -> int:
        return self.lb.shape[0]

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        return apply_operator(self.lb, u)

    def biharmonic(self, u: np.ndarray) -> np.ndarray:
        return apply_operator(self.lb, apply_operator(self.lb, u))

    def gradient(self, u: np.ndarray) -> np.ndarray:
        return gradient_field(self, u)

    def row_diagnostics(self) -> dict:
        """Row-sum and coefficient-magnitude summary of the Laplace-Beltrami table."""
        rs = np.abs(np.asarray(self.lb.sum(axis=1)).ravel())
        diag = np.abs(self.lb.diagonal())
        return {
            "max_abs_row_sum": float(rs.max(initial=0.0)),
            "max_abs_diagonal": float(diag.max(initial=0.0)),
            "max_abs_coefficient": float(np.abs(self.lb.data).max(initial=0.0)),
        }


def _rows_to_csr(Wrow: np.ndarray, nbr: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix from difference stencils: row i = sum_k w_ik (u_nbr - u_i)."""
    N, K = nbr.shape
    diag = -Wrow.sum(axis=1)
    indptr = np.arange(0, N * (K + 1) + 1, K + 1, dtype=np.int64)
    cols = np.concatenate([np.arange(N, dtype=np.int64)[:, None], nbr], axis=1)
    data = np.concatenate([diag[:, None], Wrow], axis=1)
    A = sp.csr_matrix((data.ravel(), cols.ravel(), indptr), shape=(N, N))
    A.sum_duplicates()
    return A


def assemble(tube, cfg: StencilConfig, pos=None, normals=None) -> CloudOperators:
    """Build Laplace-Beltrami and gradient operators on the footpoint cloud.

    Frames use the footpoint normals; alignment weights compare footpoint
    normals with their neighbours'.
    """
    pos = tube.pos if pos is None else pos
    normals = tube.nrm if normals is None else normals
    P = local_patches(tube, pos, normals, normals, cfg)
    W, rank, need = stencils(P, cfg)
    if np.any(rank < need):
        r = int(np.argmax(rank < need))
        raise DegenerateFitError(
            f"{cfg.basis} stencil at grid index {int(tube.ids[r])} has rank {int(rank[r])} "
            f"< {need}", indices=tube.ids[rank < need])
    jets = P.jets
    hx, hy, hxx, hxy, hyy = jets.T
    kappa = mean_curvature(hx, hy, hxx, hxy, hyy)
    a = laplace_beltrami_coefficients(hx, hy, hxx, hxy, hyy)
    lb = _rows_to_csr((a[:, None, :] @ W)[:, 0], P.nbr)
    M = gradient_local_coefficients(hx, hy)  # (N, 3, 2)
    # world = frames^T @ local; local = M @ (W_x, W_y)
    G = (P.frames.transpose(0, 2, 1) @ M) @ W[:, :2, :]
    grad = tuple(_rows_to_csr(G[:, i, :], P.nbr) for i in range(3))
    return CloudOperators(lb, grad, kappa, jets, P, W)


def apply_operator(op, field: np.ndarray) -> np.ndarray:
    """Sparse row application; accepts (N,) or (N, m) fields."""
    field = np.asarray(field, dtype=float)
    if field.shape[0] != op.shape[1]:
        raise ValueError(f"field has {field.shape[0]} rows, operator expects {op.shape[1]}")
    return op @ field


def gradient_field(ops: CloudOperators, u: np.ndarray) -> np.ndarray:
    """Surface gradient (N, 3) of a scalar field."""
    return np.stack([apply_operator(g, u) for g in ops.grad], axis=1)


def divergence(ops: CloudOperators, v: np.ndarray) -> np.ndarray:
    """Surface divergence of a vector field (N, 3)."""
    v = np.asarray(v, dtype=float)
    return sum(apply_operator(ops.grad[k], v[:, k]) for k in range(3))


def dump_operator(op: sp.spmatrix, path, ids=None) -> None:
    """Write (row, col, coeff) triplets as CSV; rows/cols are grid indices if given."""
    A = sp.coo_matrix(op)
    order = np.lexsort((A.col, A.row))
    r, c, v = A.row[order], A.col[order], A.data[order]
    if ids is not None:
        r, c = ids[r], ids[c]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("row,col,coeff\n")
        for a, b, x in zip(r, c, v):
            fh.write(f"{int(a)},{int(b)},{x:.17g}\n")
