"""Exact geometry of closed implicit surfaces.

Every surface exposes the signed distance ``d`` (negative inside), the unit
normal ``nu = grad d``, the closest point projection ``pi(x) = x - d(x) nu(x)``,
the tangential projector ``P = I - nu nu^T`` and the distance Hessian
``H = hess d``.  All methods are vectorised over leading axes: points are
arrays of shape ``(..., 3)``.
"""
import numpy as np

from .errors import NoConvergence, OutOfTube

__all__ = [
    "ImplicitSurface",
    "Sphere",
    "Torus",
    "LevelSet",
    "signed_distance",
    "closest_point",
    "normal_and_projector",
    "shape_operator",
    "grad_projection",
    "projector",
]


def projector(nu):
    """Tangential projector ``I - nu nu^T`` for unit normals of shape (..., 3)."""
    nu = np.asarray(nu, dtype=float)
    return np.eye(3) - nu[..., :, None] * nu[..., None, :]


class ImplicitSurface:
    """Base class; subclasses implement :meth:`_distance_normal` and :meth:`_hessian`.

    Parameters
    ----------
    tube_halfwidth : float
        Half-width of the tube around the surface in which the signed distance
        function is smooth.  Queries farther away raise :class:`OutOfTube`.
    scale : float
        Characteristic length used to turn absolute tolerances into relative ones.
    """

    kind = "generic"

    def __init__(self, tube_halfwidth, scale=1.0):
        if tube_halfwidth <= 0:
            raise ValueError("tube_halfwidth must be positive")
        self.tube_halfwidth = float(tube_halfwidth)
        self.scale = float(scale)

    # subclass hooks -------------------------------------------------------
    def _distance_normal(self, x):
        raise NotImplementedError

    def _hessian(self, x, d, nu):
        raise NotImplementedError

    # public API -----------------------------------------------------------
    def _checked(self, x):
        x = np.asarray(x, dtype=float)
        d, nu = self._distance_normal(x)
        bad = ~(np.abs(d) < self.tube_halfwidth)
        if np.any(bad):
            worst = np.nanmax(np.where(np.isfinite(d), np.abs(d), np.inf))
            raise OutOfTube(
                f"{int(np.count_nonzero(bad))} point(s) outside the tube "
                f"(|d| = {worst:.3g} >= {self.tube_halfwidth:.3g})")
        return x, d, nu

    def signed_distance(self, x):
        return self._checked(x)[1]

    def normal(self, x):
        """Normal ``nu(x) = nu(pi(x))``, the gradient of the distance."""
        return self._checked(x)[2]

    def closest_point(self, x):
        x, d, nu = self._checked(x)
        return x - d[..., None] * nu

    def normal_and_projector(self, xi):
        nu = self._checked(xi)[2]
        return nu, projector(nu)

    def shape_operator(self, x):
        """Hessian of the signed distance at tube points (Weingarten map on the surface)."""
        x, d, nu = self._checked(x)
        return self._hessian(x, d, nu)

    def grad_projection(self, x):
        """Jacobian of the closest point map, ``P - d H``."""
        x, d, nu = self._checked(x)
        return projector(nu) - d[..., None, None] * self._hessian(x, d, nu)

    def geometry(self, x):
        """Return ``(pi(x), d, nu, H)`` in one pass."""
        x, d, nu = self._checked(x)
        return x - d[..., None] * nu, d, nu, self._hessian(x, d, nu)

    def area(self):
        raise NotImplementedError


class Sphere(ImplicitSurface):
    """Sphere of the given radius centred at the origin."""

    kind = "sphere"

    def __init__(self, radius=1.0, tube_halfwidth=None):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        if tube_halfwidth is None:
            tube_halfwidth = 0.5 * self.radius
        if tube_halfwidth >= self.radius:
            raise ValueError("tube_halfwidth must be smaller than the radius")
        super().__init__(tube_halfwidth, scale=self.radius)

    def _distance_normal(self, x):
        r = np.linalg.norm(x, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            nu = x / r[..., None]
        return r - self.radius, nu

    def _hessian(self, x, d, nu):
        return projector(nu) / (self.radius + d)[..., None, None]

    def area(self):
        return 4.0 * np.pi * self.radius ** 2

    def __repr__(self):
        return f"Sphere(radius={self.radius})"


class Torus(ImplicitSurface):
    """Ring torus around the z-axis with major radius ``major`` and tube radius ``minor``."""

    kind = "torus"

    def __init__(self, major=2.0, minor=0.5, tube_halfwidth=None):
        if not 0 < minor < major:
            raise ValueError("need 0 < minor < major")
        self.major = float(major)
        self.minor = float(minor)
        if tube_halfwidth is None:
            tube_halfwidth = 0.5 * self.minor
        if tube_halfwidth >= self.minor:
            raise ValueError("tube_halfwidth must be smaller than the minor radius")
        super().__init__(tube_halfwidth, scale=self.minor)

    def _polar(self, x):
        rho = np.hypot(x[..., 0], x[..., 1])
        with np.errstate(invalid="ignore", divide="ignore"):
            cos_t = x[..., 0] / rho
            sin_t = x[..., 1] / rho
        a = rho - self.major
        q = np.hypot(a, x[..., 2])
        return rho, cos_t, sin_t, a, q

    def _distance_normal(self, x):
        rho, cos_t, sin_t, a, q = self._polar(x)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos_p = a / q
            sin_p = x[..., 2] / q
        nu = np.stack([cos_p * cos_t, cos_p * sin_t, sin_p], axis=-1)
        return q - self.minor, nu

    def _hessian(self, x, d, nu):
        rho, cos_t, sin_t, a, q = self._polar(x)
        cos_p = a / q
        sin_p = x[..., 2] / q
        e_theta = np.stack([-sin_t, cos_t, np.zeros_like(cos_t)], axis=-1)
        t_phi = np.stack([-sin_p * cos_t, -sin_p * sin_t, cos_p], axis=-1)
        k_phi = 1.0 / q
        k_theta = cos_p / rho
        return (k_phi[..., None, None] * t_phi[..., :, None] * t_phi[..., None, :]
                + k_theta[..., None, None] * e_theta[..., :, None] * e_theta[..., None, :])

    def parametrize(self, theta, phi):
        """Point at azimuth ``theta`` and tube angle ``phi``."""
        rho = self.major + self.minor * np.cos(phi)
        return np.stack([rho * np.cos(theta), rho * np.sin(theta),
                         self.minor * np.sin(phi)], axis=-1)

    def area(self):
        return 4.0 * np.pi ** 2 * self.major * self.minor

    def __repr__(self):
        return f"Torus(major={self.major}, minor={self.minor})"


class LevelSet(ImplicitSurface):
    """Surface ``{phi = 0}`` of a smooth function increasing in the outward direction.

    The closest point is found by Newton's method on the system
    ``y - x - lam grad phi(y) = 0, phi(y) = 0``.

    Parameters
    ----------
    phi, grad, hess : callables
        Vectorised callables mapping points ``(..., 3)`` to values ``(...)``,
        gradients ``(..., 3)`` and Hessians ``(..., 3, 3)``.
    tube_halfwidth : float
    tol : float
        Newton step tolerance relative to ``scale``.
    max_iter : int
    """

    kind = "level-set"

    def __init__(self, phi, grad, hess, tube_halfwidth, scale=1.0, tol=1e-12, max_iter=50):
        super().__init__(tube_halfwidth, scale=scale)
        self.phi = phi
        self.grad = grad
        self.hess = hess
        self.tol = tol
        self.max_iter = max_iter

    def _project(self, x):
        shape = x.shape[:-1]
        xf = x.reshape(-1, 3)
        g = self.grad(xf)
        gg = np.einsum("...i,...i", g, g)
        y = xf - (self.phi(xf) / gg)[:, None] * g
        lam = np.einsum("...i,...i", y - xf, g) / gg
        active = np.ones(len(xf), dtype=bool)
        step = np.zeros(len(xf))
        for _ in range(self.max_iter):
            if not active.any():
                break
            ya, la, xa = y[active], lam[active], xf[active]
            ga, ha = self.grad(ya), self.hess(ya)
            res = np.concatenate([ya - xa - la[:, None] * ga, self.phi(ya)[:, None]], axis=1)
            jac = np.zeros((len(ya), 4, 4))
            jac[:, :3, :3] = np.eye(3) - la[:, None, None] * ha
            jac[:, :3, 3] = -ga
            jac[:, 3, :3] = ga
            delta = np.linalg.solve(jac, -res[..., None])[..., 0]
            y[active] = ya + delta[:, :3]
            lam[active] = la + delta[:, 3]
            step[active] = np.linalg.norm(delta[:, :3], axis=1)
            active[active] = step[active] > self.tol * self.scale
        if active.any():
            raise NoConvergence(
                f"closest point iteration failed for {int(active.sum())} point(s)",
                residual=float(step[active].max()))
        return y.reshape(shape + (3,))

    def _distance_normal(self, x):
        y = self._project(x)
        g = self.grad(y)
        nu = g / np.linalg.norm(g, axis=-1)[..., None]
        d = np.einsum("...i,...i", x - y, nu)
        return d, nu

    def _hessian(self, x, d, nu):
        y = x - d[..., None] * nu
        g = self.grad(y)
        p = projector(nu)
        h_surf = p @ self.hess(y) @ p / np.linalg.norm(g, axis=-1)[..., None, None]
        return h_surf @ np.linalg.inv(np.eye(3) + d[..., None, None] * h_surf)


def signed_distance(surface, x):
    return surface.signed_distance(x)


def closest_point(surface, x):
    return surface.closest_point(x)


def normal_and_projector(surface, xi):
    return surface.normal_and_projector(xi)


def shape_operator(surface, xi):
    return surface.shape_operator(xi)


def grad_projection(surface, x):
    return surface.grad_projection(x)
