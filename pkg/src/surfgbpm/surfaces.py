"""Implicit surfaces with closest-point maps.

Each surface exposes :meth:`closest_point`, returning the closest surface
point, the outward unit normal there and the signed distance (positive
outside) for a batch of query points.
"""

from __future__ import annotations

import numpy as np

from .errors import ProjectionError


class ImplicitSurface:
    """Base class. Subclasses implement :meth:`closest_point`."""

    def closest_point(self, p: np.ndarray):
        """Return ``(cp, normal, signed_distance)`` for points ``p`` of shape (N, 3)."""
        raise NotImplementedError

    def distance_bound(self, p: np.ndarray) -> np.ndarray:
        """Cheap lower bound on |distance| used to prefilter grid points."""
        return np.zeros(len(p))


class Sphere(ImplicitSurface):
    def __init__(self, center=(0.0, 0.0, 0.0), radius: float = 1.0):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def closest_point(self, p):
        d = np.asarray(p, dtype=float) - self.center
        r = np.linalg.norm(d, axis=1)
        if np.any(r == 0.0):
            raise ProjectionError("closest point undefined at the sphere center")
        n = d / r[:, None]
        return self.center + self.radius * n, n, r - self.radius

    def distance_bound(self, p):
        return np.abs(np.linalg.norm(np.asarray(p) - self.center, axis=1) - self.radius)


class Ellipsoid(ImplicitSurface):
    """Axis-aligned ellipsoid ``sum((x_i - c_i)^2 / a_i^2) = 1``.

    The closest point is ``x_i = a_i^2 p_i / (a_i^2 + t)`` where ``t`` is the
    root of ``F(t) = sum((a_i p_i / (a_i^2 + t))^2) - 1``, found by Newton from
    a starting point to the left of the root, where ``F`` is convex and
    decreasing so the iteration is monotone.
    """

    def __init__(self, center=(0.0, 0.0, 0.0), axes=(1.0, 1.0, 1.0), tol: float = 1e-15,
                 maxit: int = 100):
        self.center = np.asarray(center, dtype=float)
        self.axes = np.asarray(axes, dtype=float)
        self.tol = tol
        self.maxit = maxit

    def closest_point(self, p):
        q = np.asarray(p, dtype=float) - self.center
        a = self.axes
        a2 = a * a
        amin2 = a2.min()
        t = np.max(a * np.abs(q) - a2, axis=1)
        t = np.maximum(t, -amin2 * (1 - 1e-12))
        done = np.zeros(len(q), dtype=bool)
        for _ in range(self.maxit):
            s = a2 + t[:, None]
            w = (a * q / s) ** 2
            F = w.sum(axis=1) - 1.0
            dF = -2.0 * (w / s).sum(axis=1)
            dt = np.where(done, 0.0, -F / np.where(dF == 0.0, -1.0, dF))
            t_new = np.maximum(t + dt, -amin2 * (1 - 1e-15))
            conv = np.abs(t_new - t) <= self.tol * np.maximum(1.0, np.abs(t))
            t = np.where(done, t, t_new)
            done |= conv
            if done.all():
                break
        if not done.all():
            bad = np.flatnonzero(~done)
            raise ProjectionError(f"ellipsoid projection did not converge for {len(bad)} points",
                                  indices=bad)
        x = a2 * q / (a2 + t[:, None])
        g = x / a2
        n = g / np.linalg.norm(g, axis=1, keepdims=True)
        dist = np.linalg.norm(q - x, axis=1) * np.sign(t)
        return self.center + x, n, dist

    def level(self, p):
        q = np.asarray(p, dtype=float) - self.center
        return (q * q / self.axes**2).sum(axis=1) - 1.0

    def distance_bound(self, p):
        r = np.linalg.norm(np.asarray(p) - self.center, axis=1)
        lo, hi = self.axes.min(), self.axes.max()
        return np.maximum(np.maximum(lo - r, r - hi), 0.0)


class Torus(ImplicitSurface):
    """Torus around the z axis: ``(R - sqrt(x^2 + y^2))^2 + z^2 = r^2``."""

    def __init__(self, center=(0.0, 0.0, 0.0), major: float = 1.0, minor: float = 0.3):
        self.center = np.asarray(center, dtype=float)
        self.major = float(major)
        self.minor = float(minor)

    def closest_point(self, p):
        # on the axis and on the core circle the footpoint is not unique but the
        # distance is; a fixed direction is chosen so such points (never inside
        # a tube narrower than the minor radius) still get a signed distance
        q = np.asarray(p, dtype=float) - self.center
        rho = np.hypot(q[:, 0], q[:, 1])
        on_axis = rho == 0.0
        safe = np.where(on_axis, 1.0, rho)
        core = np.zeros_like(q)
        core[:, 0] = np.where(on_axis, self.major, self.major * q[:, 0] / safe)
        core[:, 1] = np.where(on_axis, 0.0, self.major * q[:, 1] / safe)
        d = q - core
        dn = np.linalg.norm(d, axis=1)
        on_core = dn == 0.0
        n = np.where(on_core[:, None], [0.0, 0.0, 1.0], d / np.where(on_core, 1.0, dn)[:, None])
        return self.center + core + self.minor * n, n, dn - self.minor

    def distance_bound(self, p):
        q = np.asarray(p) - self.center
        rho = np.hypot(q[:, 0], q[:, 1])
        return np.abs(np.hypot(rho - self.major, q[:, 2]) - self.minor)


class Plane(ImplicitSurface):
    def __init__(self, point=(0.0, 0.0, 0.0), normal=(0.0, 0.0, 1.0)):
        self.point = np.asarray(point, dtype=float)
        n = np.asarray(normal, dtype=float)
        self.normal = n / np.linalg.norm(n)

    def closest_point(self, p):
        p = np.asarray(p, dtype=float)
        dist = (p - self.point) @ self.normal
        cp = p - dist[:, None] * self.normal
        return cp, np.broadcast_to(self.normal, p.shape).copy(), dist

    def distance_bound(self, p):
        return np.abs((np.asarray(p) - self.point) @ self.normal)


class LevelSetSurface(ImplicitSurface):
    """Zero set of a smooth level function, outward = direction of increasing phi.

    The closest point is found by alternating a Newton step onto ``phi = 0``
    along the gradient with a tangential correction towards the query point.
    Iterations are damped so that the constraint residual never grows.
    """

    def __init__(self, phi, grad, tol: float = 1e-12, maxit: int = 50):
        self.phi = phi
        self.grad = grad
        self.tol = tol
        self.maxit = maxit

    def closest_point(self, p, tol: float | None = None):
        p = np.asarray(p, dtype=float)
        tol = self.tol if tol is None else tol
        x = p.copy()
        conv = np.zeros(len(p), dtype=bool)
        for _ in range(self.maxit):
            f = self.phi(x)
            g = self.grad(x)
            g2 = (g * g).sum(axis=1)
            if np.any(g2 == 0.0):
                raise ProjectionError("vanishing level-function gradient",
                                      indices=np.flatnonzero(g2 == 0.0))
            step = (f / g2)[:, None] * g
            x_new = x - step
            n = g / np.sqrt(g2)[:, None]
            r = p - x_new
            tang = r - (r * n).sum(axis=1, keepdims=True) * n
            x_new = x_new + tang
            # damping: halve the tangential move while the residual grows
            f_new = self.phi(x_new)
            bad = np.abs(f_new) > np.abs(f) + 1e-300
            for _ in range(20):
                if not bad.any():
                    break
                tang[bad] *= 0.5
                x_new[bad] = x[bad] - step[bad] + tang[bad]
                f_new[bad] = self.phi(x_new[bad])
                bad &= np.abs(f_new) > np.abs(f) + 1e-300
            move = np.linalg.norm(x_new - x, axis=1)
            x = np.where(conv[:, None], x, x_new)
            conv |= (move <= tol) & (np.abs(f_new) / np.sqrt(g2) <= tol)
            if conv.all():
                break
        if not conv.all():
            bad = np.flatnonzero(~conv)
            raise ProjectionError(f"level-set projection did not converge for {len(bad)} points",
                                  indices=bad)
        g = self.grad(x)
        n = g / np.linalg.norm(g, axis=1, keepdims=True)
        dist = ((p - x) * n).sum(axis=1)
        return x, n, dist

    def distance_bound(self, p):
        f = self.phi(np.asarray(p, dtype=float))
        g = np.linalg.norm(self.grad(np.asarray(p, dtype=float)), axis=1)
        # first-order estimate; callers add a safety margin
        return np.abs(f) / np.maximum(g, 1e-300)
