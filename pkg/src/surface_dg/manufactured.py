"""Manufactured solutions ``(u, grad_Gamma u, f = -Lap_Gamma u + u)`` and a chart oracle.

The oracle evaluates the Laplace-Beltrami operator on a parametric chart with
fourth-order central differences,

    Lap u = g^-1/2 d_i (g^1/2 g^ij d_j u),

independently of the closed forms stored in the registry.
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import projector

__all__ = ["Manufactured", "REGISTRY", "get", "chart_for", "fd_laplace_beltrami", "oracle_check"]


@dataclass(frozen=True)
class Manufactured:
    """Exact data on a surface; callables act on points of shape (..., 3)."""

    name: str
    surface_kind: str
    u: Callable
    grad: Callable
    f: Callable
    description: str = ""


def _sphere_x1x2(surface):
    lam = 6.0 / surface.radius ** 2

    def u(x):
        return x[..., 0] * x[..., 1]

    def grad(x):
        g = np.stack([x[..., 1], x[..., 0], np.zeros_like(x[..., 0])], axis=-1)
        return np.einsum("...ij,...j->...i", projector(surface.normal(x)), g)

    def f(x):
        return (1.0 + lam) * u(x)

    return u, grad, f


def _sphere_x1(surface):
    lam = 2.0 / surface.radius ** 2

    def u(x):
        return x[..., 0]

    def grad(x):
        return projector(surface.normal(x))[..., :, 0]

    def f(x):
        return (1.0 + lam) * x[..., 0]

    return u, grad, f


def _torus_sin_theta(surface):
    def u(x):
        return x[..., 1] / np.hypot(x[..., 0], x[..., 1])

    def grad(x):
        rho2 = x[..., 0] ** 2 + x[..., 1] ** 2
        # grad sin(theta) = cos(theta) e_theta / rho
        return np.stack([-x[..., 0] * x[..., 1], x[..., 0] ** 2, np.zeros_like(rho2)],
                        axis=-1) / rho2[..., None] ** 1.5

    def f(x):
        rho2 = x[..., 0] ** 2 + x[..., 1] ** 2
        return u(x) * (1.0 + 1.0 / rho2)

    return u, grad, f


_BUILDERS = {
    "sphere_x1x2": ("sphere", _sphere_x1x2, "u = x1 x2, f = (1 + 6/R^2) u"),
    "sphere_x1": ("sphere", _sphere_x1, "u = x1, f = (1 + 2/R^2) u"),
    "torus_sin_theta": ("torus", _torus_sin_theta, "u = sin(azimuth), f = u (1 + 1/rho^2)"),
}

REGISTRY = tuple(_BUILDERS)


def get(name, surface):
    """Instantiate registry entry ``name`` on ``surface``."""
    try:
        kind, build, desc = _BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown manufactured solution {name!r}; "
                       f"available: {', '.join(REGISTRY)}") from None
    if surface.kind != kind:
        raise ValueError(f"{name!r} is defined on a {kind}, not a {surface.kind}")
    u, grad, f = build(surface)
    return Manufactured(name, kind, u, grad, f, desc)


def chart_for(surface):
    """Parametrisation ``X(s, t)`` and a box of regular parameters."""
    if surface.kind == "sphere":
        r = surface.radius

        def chart(s, t):
            return r * np.stack([np.sin(s) * np.cos(t), np.sin(s) * np.sin(t), np.cos(s)], -1)

        return chart, ((0.3, np.pi - 0.3), (0.0, 2.0 * np.pi))
    if surface.kind == "torus":
        return surface.parametrize, ((0.0, 2.0 * np.pi), (0.0, 2.0 * np.pi))
    raise ValueError(f"no chart for surface kind {surface.kind!r}")


_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_OFF = np.arange(-2, 3)


def _d(fun, s, t, axis, h):
    """Fourth-order central difference of ``fun`` in parameter ``axis``."""
    total = 0.0
    for c, o in zip(_D1, _OFF):
        if c == 0.0:
            continue
        total = total + c * (fun(s + o * h, t) if axis == 0 else fun(s, t + o * h))
    return total / h


def fd_laplace_beltrami(chart, u, s, t, h=5e-3):
    """Finite-difference Laplace-Beltrami of ``u`` (given on R^3) at chart points."""

    def metric(s_, t_):
        xs = _d(chart, s_, t_, 0, h)
        xt = _d(chart, s_, t_, 1, h)
        g = np.stack([np.stack([np.sum(xs * xs, -1), np.sum(xs * xt, -1)], -1),
                      np.stack([np.sum(xt * xs, -1), np.sum(xt * xt, -1)], -1)], -2)
        return g

    def ucomp(s_, t_):
        return u(chart(s_, t_))

    def flux(axis):
        def fl(s_, t_):
            g = metric(s_, t_)
            sq = np.sqrt(np.linalg.det(g))
            gi = np.linalg.inv(g)
            du = np.stack([_d(ucomp, s_, t_, 0, h), _d(ucomp, s_, t_, 1, h)], -1)
            return sq * np.einsum("...j,...j->...", gi[..., axis, :], du)
        return fl

    div = _d(flux(0), s, t, 0, h) + _d(flux(1), s, t, 1, h)
    return div / np.sqrt(np.linalg.det(metric(s, t)))


def oracle_check(name, surface, n_points=64, seed=0):
    """Largest relative error of the stored ``f`` against the finite-difference oracle."""
    sol = get(name, surface)
    chart, ((s0, s1), (t0, t1)) = chart_for(surface)
    rng = np.random.default_rng(seed)
    s = rng.uniform(s0, s1, n_points)
    t = rng.uniform(t0, t1, n_points)
    x = chart(s, t)
    f_fd = -fd_laplace_beltrami(chart, sol.u, s, t) + sol.u(x)
    f_ex = sol.f(x)
    return float(np.max(np.abs(f_fd - f_ex)) / np.max(np.abs(f_ex)))
