"""Pointwise differential geometry on Monge patches.

A local frame at a footpoint has rows ``(t1, t2, n)``; the surface near the
origin is the graph ``z = h(x, y)``. The mean curvature is the sum of the
principal curvatures, positive for a sphere with outward normals.

All functions accept scalars or arrays and broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_BRANCH_EPS = 1e-8


@dataclass(frozen=True)
class LocalFrame:
    origin: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    n: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """Rotation with rows (t1, t2, n): world -> local."""
        return np.stack([self.t1, self.t2, self.n])

    def to_local(self, p: np.ndarray) -> np.ndarray:
        return (np.asarray(p) - self.origin) @ self.matrix.T

    def to_world(self, q: np.ndarray) -> np.ndarray:
        return self.origin + np.asarray(q) @ self.matrix


@dataclass(frozen=True)
class MongeJet:
    h_x: float
    h_y: float
    h_xx: float
    h_xy: float
    h_yy: float

    @classmethod
    def from_coefficients(cls, a) -> "MongeJet":
        """From quadratic coefficients (a00, a10, a01, a20, a11, a02)."""
        return cls(a[1], a[2], 2 * a[3], a[4], 2 * a[5])

    def as_array(self) -> np.ndarray:
        return np.array([self.h_x, self.h_y, self.h_xx, self.h_xy, self.h_yy])


@dataclass(frozen=True)
class FundamentalForm:
    E: float
    F: float
    G: float

    @property
    def W2(self):
        return self.E * self.G - self.F**2


def frame_matrices(normals: np.ndarray) -> np.ndarray:
    """Batched frames (N, 3, 3) with rows (t1, t2, n).

    The tangents are the image of e_x, e_y under the minimal rotation taking
    e_z to n, which is continuous in n except at n = -e_z, where the fixed
    branch t1 = e_x, t2 = -e_y is used. A Gram-Schmidt pass makes the
    frame orthonormal to rounding.
    """
    n = np.asarray(normals, dtype=float)
    nn = np.linalg.norm(n, axis=1)
    if np.any(nn == 0.0) or not np.all(np.isfinite(nn)):
        raise ValueError("zero or non-finite normal")
    n = n / nn[:, None]
    nx, ny, nz = n[:, 0], n[:, 1], n[:, 2]
    branch = 1.0 + nz < _BRANCH_EPS
    s = 1.0 / np.where(branch, 1.0, 1.0 + nz)
    t1 = np.stack([1 - nx * nx * s, -nx * ny * s, -nx], axis=1)
    t2 = np.stack([-nx * ny * s, 1 - ny * ny * s, -ny], axis=1)
    t1[branch] = (1.0, 0.0, 0.0)
    t2[branch] = (0.0, -1.0, 0.0)
    t1 -= (t1 * n).sum(axis=1, keepdims=True) * n
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2, n], axis=1)


def build_local_frame(origin, normal) -> LocalFrame:
    """Orthonormal right-handed frame with third axis ``normal``."""
    normal = np.asarray(normal, dtype=float)
    if np.linalg.norm(normal) == 0.0:
        raise ValueError("zero normal")
    if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
        raise ValueError("normal must have unit length")
    R = frame_matrices(normal[None, :])[0]
    return LocalFrame(np.asarray(origin, dtype=float), R[0], R[1], R[2])


def fundamental_form(j: MongeJet) -> FundamentalForm:
    return FundamentalForm(1 + j.h_x**2, j.h_x * j.h_y, 1 + j.h_y**2)


def mean_curvature(h_x, h_y, h_xx, h_xy, h_yy):
    """Sum of principal curvatures; +2/R on a sphere with outward local z."""
    W2 = 1 + h_x * h_x + h_y * h_y
    return -((1 + h_y * h_y) * h_xx - 2 * h_x * h_y * h_xy + (1 + h_x * h_x) * h_yy) / W2**1.5


def laplace_beltrami_coefficients(h_x, h_y, h_xx, h_xy, h_yy):
    """Coefficients of (xi_x, xi_y, xi_xx, xi_xy, xi_yy) in the Laplace-Beltrami operator.

    Returns an array with trailing axis 5.
    """
    h_x, h_y = np.asarray(h_x, dtype=float), np.asarray(h_y, dtype=float)
    W2 = 1 + h_x * h_x + h_y * h_y
    kap = mean_curvature(h_x, h_y, h_xx, h_xy, h_yy)
    f = kap / np.sqrt(W2)
    return np.stack([f * h_x, f * h_y, (1 + h_y * h_y) / W2, -2 * h_x * h_y / W2,
                     (1 + h_x * h_x) / W2], axis=-1)


def laplace_beltrami_point(j: MongeJet, xi_x, xi_y, xi_xx, xi_xy, xi_yy):
    """Surface Laplacian of xi at the patch origin from its local derivatives.

    Expands the divergence of the surface gradient for a graph:
    ``g^{ij} xi_ij + (kappa / sqrt(W2)) (h_x xi_x + h_y xi_y)``.
    """
    c = laplace_beltrami_coefficients(j.h_x, j.h_y, j.h_xx, j.h_xy, j.h_yy)
    return c @ np.array([xi_x, xi_y, xi_xx, xi_xy, xi_yy], dtype=float)


def gradient_local_coefficients(h_x, h_y):
    """(3, 2) maps per point: local gradient = M @ (xi_x, xi_y).

    Trailing shape (..., 3, 2).
    """
    h_x, h_y = np.asarray(h_x, dtype=float), np.asarray(h_y, dtype=float)
    W2 = 1 + h_x * h_x + h_y * h_y
    M = np.stack([
        np.stack([1 + h_y * h_y, -h_x * h_y], axis=-1),
        np.stack([-h_x * h_y, 1 + h_x * h_x], axis=-1),
        np.stack([h_x, h_y], axis=-1),
    ], axis=-2)
    return M / W2[..., None, None]


def surface_gradient(j: MongeJet, xi_x, xi_y, frame: LocalFrame) -> np.ndarray:
    """Tangential gradient in world coordinates."""
    g = gradient_local_coefficients(j.h_x, j.h_y) @ np.array([xi_x, xi_y], dtype=float)
    return frame.matrix.T @ g


def patch_normal_local(h_x, h_y) -> np.ndarray:
    """Unit normal (-h_x, -h_y, 1)/sqrt(W2) of the graph in local coordinates."""
    h_x, h_y = np.asarray(h_x, dtype=float), np.asarray(h_y, dtype=float)
    v = np.stack([-h_x, -h_y, np.ones_like(h_x)], axis=-1)
    return v / np.sqrt(1 + h_x * h_x + h_y * h_y)[..., None]


def surface_divergence(ops, v: np.ndarray) -> np.ndarray:
    """Surface divergence of a vector field (N, 3) sampled at footpoints.

    Sums the k-th world component of the surface gradient of v_k, using the
    assembled gradient operators of :class:`~surfgbpm.operators.CloudOperators`.
    """
    v = np.asarray(v, dtype=float)
    return ops.grad[0] @ v[:, 0] + ops.grad[1] @ v[:, 1] + ops.grad[2] @ v[:, 2]
