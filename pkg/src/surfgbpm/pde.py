"""Explicit right-hand sides and stability guards for the three PDE families.

All families share the Lagrangian form

    du/dt = rate(u) - u * div_s(v)

along footpoint trajectories, where ``div_s(v)`` is the surface divergence
of the surface velocity (the dilation term). Time stepping is forward Euler
and is driven by :mod:`surfgbpm.scenarios`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, StabilityError
from .evolution import VelocityLaw
from .operators import CloudOperators, divergence

FAMILIES = ("none", "advection_diffusion", "reaction_diffusion_pair", "cahn_hilliard")

# largest Laplace-Beltrami eigenvalue magnitude is about 7/dx^2 for the
# default polynomial stencils; 0.25 dx^2/D keeps D*dt*|lambda| < 2
DIFFUSION_CFL = 0.25


def double_well_prime(u):
    """Derivative of g(u) = u^2 (1 - u)^2."""
    return 2.0 * u * (1.0 - u) * (1.0 - 2.0 * u)


@dataclass
class PdeSpec:
    """Parameters of one PDE family.

    Parameters
    ----------
    family : str
        One of ``FAMILIES``.
    D, D2 : float
        Diffusivities of the first and second field.
    source : callable, optional
        ``source(x, t, vals) -> (N,)`` for advection-diffusion.
    gamma, a, b : float
        Activator-depleted kinetics for the pair.
    Pe, Cn, nu : float
        Cahn-Hilliard numbers.
    fourth_order_c : float
        Constant of the fourth-order step bound ``dt <= c dx^4 Pe / (nu Cn^2)``.
    """

    family: str = "advection_diffusion"
    D: float = 1.0
    D2: float = 10.0
    source: Callable | None = None
    gamma: float = 30.0
    a: float = 0.1
    b: float = 0.9
    Pe: float = 1.0
    Cn: float = 0.06
    nu: float = 1.0
    fourth_order_c: float = 0.02
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown PDE family {self.family!r}")
        for name in ("D", "D2", "Pe", "nu", "Cn", "fourth_order_c"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.gamma < 0:
            raise ConfigError("gamma must be non-negative")

    @property
    def n_fields(self) -> int:
        return 2 if self.family == "reaction_diffusion_pair" else 1

    def steady_state(self):
        """Uniform fixed point (u, w) of the kinetics."""
        u = self.a + self.b
        return u, self.b / u**2


def max_time_step(spec: PdeSpec, dx: float) -> float:
    """Largest forward-Euler step allowed by the configured guards."""
    if spec.family == "none":
        return np.inf
    if spec.family == "cahn_hilliard":
        k4 = spec.nu * spec.Cn**2 / spec.Pe
        k2 = spec.nu / spec.Pe
        return min(spec.fourth_order_c * dx**4 / k4, DIFFUSION_CFL * dx**2 / k2)
    Dmax = max(spec.D, spec.D2) if spec.family == "reaction_diffusion_pair" else spec.D
    return DIFFUSION_CFL * dx**2 / Dmax


def check_time_step(spec: PdeSpec, dx: float, dt: float) -> None:
    """Refuse a step above the stability guard, suggesting a safe one."""
    lim = max_time_step(spec, dx)
    if dt > lim * (1 + 1e-12):
        raise StabilityError(
            f"dt={dt:g} exceeds the {spec.family} stability bound {lim:.3g} at dx={dx:g}; "
            f"use dt <= {lim:.3g}", phase="config", step=0)


def dilation(ops: CloudOperators, law: VelocityLaw, pos, nrm, vals, t) -> np.ndarray:
    """Surface divergence of the surface velocity at footpoints.

    Ambient fields are differentiated with the gradient operators. For a
    normal law ``v = V n`` the identity ``div_s(V n) = kappa V`` is used.
    """
    if not law.moving(t):
        return np.zeros(len(pos))
    if law.kind == "ambient":
        return divergence(ops, law.velocity(pos, t))
    return ops.kappa * law.normal_speed(ops.kappa, vals)


def rates(spec: PdeSpec, ops: CloudOperators, vals: np.ndarray, pos: np.ndarray, t: float,
          div_v: np.ndarray | None = None) -> np.ndarray:
    """Time derivative (N, m) of the carried values along trajectories."""
    vals = np.asarray(vals, dtype=float)
    out = np.zeros_like(vals)
    fam = spec.family
    if fam == "none":
        return out
    u = vals[:, 0]
    if fam == "advection_diffusion":
        out[:, 0] = spec.D * ops.laplacian(u)
        if spec.source is not None:
            out[:, 0] += spec.source(pos, t, vals)
    elif fam == "reaction_diffusion_pair":
        w = vals[:, 1]
        u2w = u * u * w
        out[:, 0] = spec.D * ops.laplacian(u) + spec.gamma * (spec.a - u + u2w)
        out[:, 1] = spec.D2 * ops.laplacian(w) + spec.gamma * (spec.b - u2w)
    else:
        k2 = spec.nu / spec.Pe
        k4 = spec.nu * spec.Cn**2 / spec.Pe
        Lu = ops.laplacian(u)
        out[:, 0] = k2 * ops.laplacian(double_well_prime(u)) - k4 * ops.laplacian(Lu)
    if div_v is not None:
        out -= vals * div_v[:, None]
    return out


def euler_update(spec: PdeSpec, ops: CloudOperators, vals, pos, t, dt, div_v=None):
    """One forward-Euler value update."""
    return vals + dt * rates(spec, ops, vals, pos, t, div_v)


def step_advection_diffusion(spec, ops, vals, pos, t, dt, div_v=None):
    if spec.family != "advection_diffusion":
        raise ConfigError("spec is not advection_diffusion")
    return euler_update(spec, ops, vals, pos, t, dt, div_v)


def step_reaction_diffusion_pair(spec, ops, vals, pos, t, dt, div_v=None):
    if spec.family != "reaction_diffusion_pair":
        raise ConfigError("spec is not reaction_diffusion_pair")
    return euler_update(spec, ops, vals, pos, t, dt, div_v)


def step_cahn_hilliard(spec, ops, vals, pos, t, dt, div_v=None):
    if spec.family != "cahn_hilliard":
        raise ConfigError("spec is not cahn_hilliard")
    return euler_update(spec, ops, vals, pos, t, dt, div_v)
